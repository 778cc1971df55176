"""
Model class ``X_i = m(rho; Z_{i-1}) + sigma(theta; Z_{i-1}) eps_i``.

Mean families
-------------
zero
    ``m = 0`` (no mean parameters).
ar
    Linear autoregression without intercept, ``m = sum_k rho_k z_k``.
expar
    Exponential autoregression ``[rho_lin + rho_dec exp(-kappa z_1^2)] z_1`` with
    ``kappa`` fixed. ``expar_terms`` selects which of the two coefficients are
    free; a term that is not listed is held at zero.

Volatility families
-------------------
constant
    ``sigma^2 = theta_0``.
arch
    ``sigma^2 = theta_0 + sum_j theta_j z_j^2``.
garch
    GARCH(1,1) through its ARCH(infinity) form, truncated at ``trunc_lag``
    terms: ``sigma^2 = c / (1 - a) + b sum_{j<=L} a^(j-1) z_j^2`` with
    ``theta = (c, a, b)``. The usual recursion ``h_i = c + a X_{i-1}^2 + b h_{i-1}``
    unrolls with the roles of ``a`` and ``b`` swapped; this form is kept as given.

Every built-in mean is linear in ``rho`` and the constant/ARCH variances are
linear in ``theta``; the estimators exploit this for closed-form fits.

Lag vectors are ordered newest first: row ``i-1`` of :meth:`SeriesWindow.lags`
is ``Z_{i-1} = (X_{i-1}, ..., X_{i-q})``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from nlhet.errors import InvalidArgument, SimulationDiverged

MEAN_FAMILIES = ("zero", "ar", "expar")
VOL_FAMILIES = ("constant", "arch", "garch")
EXPAR_TERMS = ("linear", "decay")

# lower bound on sigma; see ``vol_terms``
VOL_FLOOR = 1e-8
# upper end of [0, 1) coefficients is 1 - INTERVAL_MARGIN
INTERVAL_MARGIN = 1e-6
DEFAULT_BURN_IN = 500
DEFAULT_TRUNC_LAG = 50
# explosive parameters pass this within a few hundred steps; stationary paths never do
_DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class ModelSpec:
    """A parametric family: mean family, volatility family and hyperparameters."""

    mean_family: str = "zero"
    vol_family: str = "constant"
    mean_order: int = 0
    vol_order: int = 0
    kappa: float = 0.0
    expar_terms: tuple[str, ...] = EXPAR_TERMS
    trunc_lag: int = DEFAULT_TRUNC_LAG

    def __post_init__(self):
        if self.mean_family not in MEAN_FAMILIES:
            raise InvalidArgument(f"unknown mean family {self.mean_family!r}")
        if self.vol_family not in VOL_FAMILIES:
            raise InvalidArgument(f"unknown volatility family {self.vol_family!r}")
        object.__setattr__(self, "expar_terms", tuple(self.expar_terms))
        if self.mean_family == "ar" and self.mean_order < 1:
            raise InvalidArgument("ar mean needs mean_order >= 1")
        if self.mean_family == "expar":
            if not self.expar_terms or any(t not in EXPAR_TERMS for t in self.expar_terms):
                raise InvalidArgument(f"expar_terms must be a non-empty subset of {EXPAR_TERMS}")
            if len(set(self.expar_terms)) != len(self.expar_terms):
                raise InvalidArgument("duplicate expar term")
            # canonical order so rho[0] is always the linear coefficient when present
            object.__setattr__(
                self, "expar_terms", tuple(t for t in EXPAR_TERMS if t in self.expar_terms)
            )
        if self.kappa < 0:
            raise InvalidArgument("kappa must be nonnegative")
        if self.vol_family == "arch" and self.vol_order < 1:
            raise InvalidArgument("arch volatility needs vol_order >= 1")
        if self.vol_family == "garch" and self.trunc_lag < 1:
            raise InvalidArgument("trunc_lag must be positive")

    @property
    def mean_lags(self) -> int:
        return {"zero": 0, "ar": self.mean_order, "expar": 1}[self.mean_family]

    @property
    def vol_lags(self) -> int:
        return {"constant": 0, "arch": self.vol_order, "garch": self.trunc_lag}[self.vol_family]

    @property
    def q(self) -> int:
        """Effective lag order."""
        return max(self.mean_lags, self.vol_lags)

    @property
    def n_rho(self) -> int:
        return {"zero": 0, "ar": self.mean_order, "expar": len(self.expar_terms)}[self.mean_family]

    @property
    def n_theta(self) -> int:
        return {"constant": 1, "arch": self.vol_order + 1, "garch": 3}[self.vol_family]

    @property
    def variance_is_linear(self) -> bool:
        return self.vol_family in ("constant", "arch")

    def param_names(self) -> tuple[list[str], list[str]]:
        if self.mean_family == "ar":
            rho = [f"rho{k + 1}" for k in range(self.mean_order)]
        elif self.mean_family == "expar":
            rho = [{"linear": "rho0", "decay": "rho1"}[t] for t in self.expar_terms]
        else:
            rho = []
        if self.vol_family == "garch":
            theta = ["c", "a", "b"]
        else:
            theta = [f"theta{j}" for j in range(self.n_theta)]
        return rho, theta

    def theta_transforms(self) -> list:
        """Per-coordinate constraint descriptors for ``theta`` (see ``optimize``)."""
        unit = ("interval", 0.0, 1.0 - INTERVAL_MARGIN)
        if self.vol_family == "constant":
            return ["positive"]
        if self.vol_family == "arch":
            return ["positive"] + [unit] * self.vol_order
        return ["positive", unit, unit]

    def to_dict(self) -> dict:
        mean: dict = {"family": self.mean_family}
        if self.mean_family == "ar":
            mean["order"] = self.mean_order
        if self.mean_family == "expar":
            mean["kappa"] = self.kappa
            mean["terms"] = list(self.expar_terms)
        vol: dict = {"family": self.vol_family}
        if self.vol_family == "arch":
            vol["q"] = self.vol_order
        if self.vol_family == "garch":
            vol["trunc_lag"] = self.trunc_lag
        return {"mean": mean, "vol": vol}

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        try:
            mean = d["mean"]
            vol = d["vol"]
            mfam = mean["family"]
            vfam = vol["family"]
        except (KeyError, TypeError) as exc:
            raise InvalidArgument(f"model spec is missing key {exc}") from None
        kwargs: dict = {"mean_family": mfam, "vol_family": vfam}
        if mfam == "ar":
            kwargs["mean_order"] = int(mean.get("order", 1))
        if mfam == "expar":
            if "kappa" not in mean:
                raise InvalidArgument("model spec is missing key 'mean.kappa'")
            kwargs["kappa"] = float(mean["kappa"])
            kwargs["expar_terms"] = tuple(mean.get("terms", EXPAR_TERMS))
        if vfam == "arch":
            if "q" not in vol:
                raise InvalidArgument("model spec is missing key 'vol.q'")
            kwargs["vol_order"] = int(vol["q"])
        if vfam == "garch":
            kwargs["trunc_lag"] = int(vol.get("trunc_lag", DEFAULT_TRUNC_LAG))
        return cls(**kwargs)


@dataclass(frozen=True)
class ParamVector:
    """``psi = (rho, theta)``."""

    rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        object.__setattr__(self, "rho", np.atleast_1d(np.asarray(self.rho, dtype=float)).copy())
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)).copy())
        self.rho.setflags(write=False)
        self.theta.setflags(write=False)

    @property
    def psi(self) -> np.ndarray:
        return np.concatenate([self.rho, self.theta])

    @classmethod
    def from_psi(cls, spec: ModelSpec, psi) -> ParamVector:
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (spec.n_rho + spec.n_theta,):
            raise InvalidArgument(
                f"psi has length {psi.size}, expected {spec.n_rho + spec.n_theta}"
            )
        return cls(psi[: spec.n_rho], psi[spec.n_rho :])

    def to_dict(self) -> dict:
        return {"rho": self.rho.tolist(), "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> ParamVector:
        try:
            return cls(d.get("rho", []), d["theta"])
        except (KeyError, TypeError, AttributeError):
            raise InvalidArgument("params need a 'theta' list (and optional 'rho')") from None


def check_dims(spec: ModelSpec, params: ParamVector) -> None:
    if params.rho.size != spec.n_rho:
        raise InvalidArgument(f"rho has length {params.rho.size}, expected {spec.n_rho}")
    if params.theta.size != spec.n_theta:
        raise InvalidArgument(f"theta has length {params.theta.size}, expected {spec.n_theta}")


def theta_feasible(spec: ModelSpec, theta) -> bool:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_theta,) or not np.all(np.isfinite(theta)):
        return False
    if spec.vol_family == "constant":
        return theta[0] > 0
    if spec.vol_family == "arch":
        return theta[0] > 0 and bool(np.all(theta[1:] >= 0))
    c, a, b = theta
    return c > 0 and a >= 0 and b >= 0 and a + b < 1


def check_params(spec: ModelSpec, params: ParamVector) -> None:
    check_dims(spec, params)
    if not np.all(np.isfinite(params.rho)):
        raise InvalidArgument("rho must be finite")
    if not theta_feasible(spec, params.theta):
        raise InvalidArgument(
            f"theta={params.theta.tolist()} is outside the {spec.vol_family} constraint region"
        )


@dataclass(frozen=True)
class SeriesWindow:
    """Observations ``X_1..X_n`` plus the ``q`` conditioning values.

    ``presample`` holds ``(X_{1-q}, ..., X_0)`` in chronological order, so
    ``Z_0 = (X_0, ..., X_{1-q})``. Estimators never use presample values as
    responses.
    """

    presample: np.ndarray
    observations: np.ndarray

    def __post_init__(self):
        pre = np.asarray(self.presample, dtype=float).reshape(-1).copy()
        obs = np.asarray(self.observations, dtype=float).reshape(-1).copy()
        if not (np.all(np.isfinite(pre)) and np.all(np.isfinite(obs))):
            raise InvalidArgument("series contains non-finite values")
        pre.setflags(write=False)
        obs.setflags(write=False)
        object.__setattr__(self, "presample", pre)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.size

    @property
    def q(self) -> int:
        return self.presample.size

    @property
    def x(self) -> np.ndarray:
        return self.observations

    @cached_property
    def full(self) -> np.ndarray:
        return np.concatenate([self.presample, self.observations])

    @cached_property
    def lags(self) -> np.ndarray:
        """(n, q) matrix whose row ``i-1`` is ``Z_{i-1}``."""
        q = self.q
        if q == 0:
            return np.zeros((self.n, 0))
        win = np.lib.stride_tricks.sliding_window_view(self.full[:-1], q)
        return np.ascontiguousarray(win[:, ::-1])

    def lag(self, i: int) -> np.ndarray:
        """``Z_{i-1}`` for ``1 <= i <= n``."""
        if not 1 <= i <= self.n:
            raise IndexError(f"i={i} outside 1..{self.n}")
        return self.lags[i - 1]

    def for_spec(self, spec: ModelSpec) -> SeriesWindow:
        """Check the window carries enough presample values for ``spec``."""
        if self.q < spec.q:
            raise InvalidArgument(f"series has {self.q} presample values, model needs {spec.q}")
        return self


def _lag_matrix(spec: ModelSpec, z, need: int) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 1
    Z = z[None, :] if scalar else z
    if Z.ndim != 2 or Z.shape[1] < need:
        raise InvalidArgument(f"lag vector needs at least {need} entries")
    return Z, scalar


def _mean_design(spec: ModelSpec, Z: np.ndarray) -> np.ndarray:
    """Regressors ``B(z)`` with ``m(rho; z) = B(z) @ rho`` (all built-ins are linear)."""
    if spec.mean_family == "zero":
        return np.zeros((Z.shape[0], 0))
    if spec.mean_family == "ar":
        return Z[:, : spec.mean_order]
    z1 = Z[:, 0]
    cols = []
    for term in spec.expar_terms:
        if term == "linear":
            cols.append(z1)
        else:
            cols.append(z1 * np.exp(-spec.kappa * z1 * z1))
    return np.column_stack(cols)


def mean_design(spec: ModelSpec, z) -> np.ndarray:
    Z, scalar = _lag_matrix(spec, z, spec.mean_lags)
    B = _mean_design(spec, Z)
    return B[0] if scalar else B


def _check_rho(spec, rho):
    rho = np.asarray(rho, dtype=float).reshape(-1)
    if rho.size != spec.n_rho:
        raise InvalidArgument(f"rho has length {rho.size}, expected {spec.n_rho}")
    return rho


def mean(spec: ModelSpec, rho, z):
    """``m(rho; z)``; ``z`` is one lag vector or an (n, q) matrix."""
    rho = _check_rho(spec, rho)
    Z, scalar = _lag_matrix(spec, z, spec.mean_lags)
    m = _mean_design(spec, Z) @ rho
    return float(m[0]) if scalar else m


def grad_mean(spec: ModelSpec, rho, z) -> np.ndarray:
    _check_rho(spec, rho)
    return mean_design(spec, z)


def hess_mean(spec: ModelSpec, rho, z) -> np.ndarray:
    _check_rho(spec, rho)
    Z, scalar = _lag_matrix(spec, z, spec.mean_lags)
    H = np.zeros((Z.shape[0], spec.n_rho, spec.n_rho))
    return H[0] if scalar else H


class VolTerms(NamedTuple):
    sigma: np.ndarray
    dsigma: np.ndarray | None
    d2sigma: np.ndarray | None
    floored: np.ndarray


def _variance_parts(spec: ModelSpec, theta: np.ndarray, Z: np.ndarray, order: int):
    """``s = sigma^2`` and its first/second derivatives in ``theta``."""
    n = Z.shape[0]
    J = spec.n_theta
    ds = d2s = None
    if spec.vol_family == "constant":
        s = np.full(n, theta[0])
        if order >= 1:
            ds = np.ones((n, 1))
        if order >= 2:
            d2s = np.zeros((n, 1, 1))
    elif spec.vol_family == "arch":
        W = np.column_stack([np.ones(n), Z[:, : spec.vol_order] ** 2])
        s = W @ theta
        if order >= 1:
            ds = W
        if order >= 2:
            d2s = np.zeros((n, J, J))
    else:
        c, a, b = theta
        L = spec.trunc_lag
        j = np.arange(1, L + 1)
        z2 = Z[:, :L] ** 2
        pw = a ** (j - 1)
        geo = z2 @ pw
        s = c / (1 - a) + b * geo
        if order >= 1:
            dpw = (j - 1) * a ** np.maximum(j - 2, 0)
            dgeo = z2 @ dpw
            ds = np.column_stack([np.full(n, 1 / (1 - a)), c / (1 - a) ** 2 + b * dgeo, geo])
        if order >= 2:
            d2pw = (j - 1) * (j - 2) * a ** np.maximum(j - 3, 0)
            d2s = np.zeros((n, 3, 3))
            d2s[:, 0, 1] = d2s[:, 1, 0] = 1 / (1 - a) ** 2
            d2s[:, 1, 1] = 2 * c / (1 - a) ** 3 + b * (z2 @ d2pw)
            d2s[:, 1, 2] = d2s[:, 2, 1] = dgeo
    return s, ds, d2s


def _check_theta(spec, theta):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if not theta_feasible(spec, theta):
        raise InvalidArgument(
            f"theta={theta.tolist()} is outside the {spec.vol_family} constraint region"
        )
    return theta


def vol_terms(spec: ModelSpec, theta, Z, order: int = 0, check: bool = True) -> VolTerms:
    """Vectorised ``sigma``, ``d sigma``, ``d^2 sigma`` on an (n, q) lag matrix.

    ``sigma`` is floored at ``VOL_FLOOR``; ``floored`` marks the rows where the
    floor was applied. Derivatives use the unfloored formula.
    """
    theta = _check_theta(spec, theta) if check else np.asarray(theta, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[1] < spec.vol_lags:
        raise InvalidArgument(f"lag matrix needs at least {spec.vol_lags} columns")
    s, ds, d2s = _variance_parts(spec, theta, Z, order)
    raw = np.sqrt(np.maximum(s, 0.0))
    floored = raw < VOL_FLOOR
    sigma = np.where(floored, VOL_FLOOR, raw)
    dsig = d2sig = None
    if order >= 1:
        dsig = ds / (2 * sigma[:, None])
    if order >= 2:
        d2sig = d2s / (2 * sigma[:, None, None]) - np.einsum("ni,nj->nij", ds, ds) / (
            4 * sigma[:, None, None] ** 3
        )
    return VolTerms(sigma, dsig, d2sig, floored)


def variance_design(spec: ModelSpec, Z) -> np.ndarray:
    """Regressors ``W(z)`` with ``sigma^2 = W(z) @ theta`` for linear variance families."""
    if not spec.variance_is_linear:
        raise InvalidArgument(f"{spec.vol_family} variance is not linear in theta")
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    if spec.vol_family == "constant":
        return np.ones((n, 1))
    return np.column_stack([np.ones(n), Z[:, : spec.vol_order] ** 2])


def vol(spec: ModelSpec, theta, z):
    Z, scalar = _lag_matrix(spec, z, spec.vol_lags)
    sig = vol_terms(spec, theta, Z).sigma
    return float(sig[0]) if scalar else sig


def grad_vol(spec: ModelSpec, theta, z) -> np.ndarray:
    Z, scalar = _lag_matrix(spec, z, spec.vol_lags)
    d = vol_terms(spec, theta, Z, order=1).dsigma
    return d[0] if scalar else d


def hess_vol(spec: ModelSpec, theta, z) -> np.ndarray:
    Z, scalar = _lag_matrix(spec, z, spec.vol_lags)
    d2 = vol_terms(spec, theta, Z, order=2).d2sigma
    return d2[0] if scalar else d2


def _scalar_recursion(spec: ModelSpec, rho: np.ndarray, theta: np.ndarray):
    """Plain-float ``(m, s)`` evaluators on a newest-first lag list, for simulation."""
    mf = spec.mean_family
    if mf == "zero":
        def m(z):
            return 0.0
    elif mf == "ar":
        coef = [float(r) for r in rho]

        def m(z):
            return sum(c * v for c, v in zip(coef, z))
    else:
        lin = dec = 0.0
        for term, r in zip(spec.expar_terms, rho):
            if term == "linear":
                lin = float(r)
            else:
                dec = float(r)
        kap = float(spec.kappa)
        exp = math.exp

        def m(z):
            z1 = z[0]
            return (lin + dec * exp(-kap * z1 * z1)) * z1

    vf = spec.vol_family
    if vf == "constant":
        t0 = float(theta[0])

        def s(z):
            return t0
    elif vf == "arch":
        t0 = float(theta[0])
        tj = [float(t) for t in theta[1:]]
        if len(tj) == 1:
            t1 = tj[0]

            def s(z):
                z1 = z[0]
                return t0 + t1 * z1 * z1
        else:
            def s(z):
                return t0 + sum(t * v * v for t, v in zip(tj, z))
    else:
        c, a, b = (float(t) for t in theta)
        w = [b * a ** (j - 1) for j in range(1, spec.trunc_lag + 1)]
        base = c / (1 - a)

        def s(z):
            return base + sum(wj * v * v for wj, v in zip(w, z))

    return m, s


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def simulate_series(
    spec: ModelSpec,
    psi: ParamVector,
    noise,
    n: int,
    burn_in: int = DEFAULT_BURN_IN,
    seed=None,
    initial: float = 0.0,
) -> SeriesWindow:
    """Simulate the recursion with every initial lag set to ``initial``.

    The first ``burn_in`` values are discarded and the last ``q + n`` values are
    returned, the first ``q`` of them as presample.

    Parameters
    ----------
    noise
        Anything with ``sample(rng, size)`` returning unit-variance draws,
        normally a :class:`~nlhet.noise.NoiseModel`.
    seed
        int, :class:`numpy.random.SeedSequence` or a ``Generator``.
    initial
        Starting value of the lags (default 0).
    """
    check_params(spec, psi)
    if n < 1 or burn_in < 0:
        raise InvalidArgument("need n >= 1 and burn_in >= 0")
    q = spec.q
    rng = _as_generator(seed)
    total = burn_in + q + n
    eps = np.asarray(noise.sample(rng, total), dtype=float)
    m, s = _scalar_recursion(spec, psi.rho, psi.theta)
    sqrt = math.sqrt
    floor2 = VOL_FLOOR * VOL_FLOOR
    # newest first
    lagvals = [float(initial)] * max(q, 1)
    out = np.empty(total)
    for t in range(total):
        v = s(lagvals)
        x = m(lagvals) + sqrt(v if v > floor2 else floor2) * eps[t]
        if not (abs(x) < _DIVERGENCE_LIMIT):
            raise SimulationDiverged(f"|x| exceeded {_DIVERGENCE_LIMIT:g} at step {t}")
        out[t] = x
        if q:
            lagvals.insert(0, x)
            lagvals.pop()
    keep = out[burn_in:]
    return SeriesWindow(keep[:q], keep[q:])

