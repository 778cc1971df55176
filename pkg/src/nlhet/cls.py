"""
Two-step conditional least squares.

Step 1 minimises

    U_n(rho) = sum_i [X_i - m(rho; Z_{i-1})]^2 lambda^2(Z_{i-1})

and step 2, with ``rho`` fixed at the step-1 value, minimises

    S_n(theta) = sum_i {[X_i - m(rho; Z_{i-1})]^2 - sigma^2(theta; Z_{i-1})}^2 gamma^2(Z_{i-1}).

Both steps are weighted linear regressions for the built-in families whose
variance is linear in ``theta``; the truncated GARCH variance falls back on
the Newton minimiser.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from nlhet import model as M
from nlhet.errors import InvalidArgument, SingularInformationError
from nlhet.optimize import (
    LinearLSQProblem,
    OptimReport,
    Transform,
    minimize,
    solve_linear_lsq,
)

log = logging.getLogger(__name__)

# floor applied to theta_0 when the step-2 regression leaves the constraint region
THETA0_FLOOR = 1e-8


@dataclass(frozen=True)
class Weights:
    """Bounded weight functions ``lambda(z)`` and ``gamma(z)``.

    Each is a callable mapping an (n, q) lag matrix to an (n,) array, or None
    for the constant 1.
    """

    lam: Callable | None = None
    gamma: Callable | None = None

    def lam2(self, Z: np.ndarray) -> np.ndarray:
        return _weight_sq(self.lam, Z)

    def gamma2(self, Z: np.ndarray) -> np.ndarray:
        return _weight_sq(self.gamma, Z)


def _weight_sq(fn, Z):
    if fn is None:
        return np.ones(Z.shape[0])
    w = np.asarray(fn(Z), dtype=float)
    w = np.broadcast_to(w, (Z.shape[0],))
    if not np.all(np.isfinite(w)):
        raise InvalidArgument("weight function returned non-finite values")
    return w * w


DEFAULT_WEIGHTS = Weights()


@dataclass(frozen=True)
class CovarianceEstimate:
    phi11_hat: np.ndarray
    phi22_hat: np.ndarray
    delta_hat: np.ndarray
    eps_third_hat: float
    eps_fourth_central_hat: float

    def to_dict(self) -> dict:
        return {
            "phi11_hat": self.phi11_hat.tolist(),
            "phi22_hat": self.phi22_hat.tolist(),
            "delta_hat": self.delta_hat.tolist(),
            "eps_third_hat": self.eps_third_hat,
            "eps_fourth_central_hat": self.eps_fourth_central_hat,
        }

    @property
    def asymptotic(self) -> np.ndarray:
        return self.delta_hat


@dataclass
class EstimationResult:
    psi_hat: M.ParamVector
    covariance: object
    objective: float
    method: str
    n: int
    spec: M.ModelSpec
    diagnostics: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", True))

    def standard_errors(self) -> np.ndarray:
        """``sqrt(diag(V) / n)`` from the asymptotic covariance ``V``."""
        if self.covariance is None:
            return np.full(self.psi_hat.psi.size, np.nan)
        V = self.covariance.asymptotic
        return np.sqrt(np.maximum(np.diag(V), 0.0) / self.n)

    def to_dict(self) -> dict:
        rho_names, theta_names = self.spec.param_names()
        return {
            "schema": 1,
            "method": self.method,
            "model": self.spec.to_dict(),
            "n": self.n,
            "param_names": rho_names + theta_names,
            "psi_hat": self.psi_hat.to_dict(),
            "std_errors": self.standard_errors().tolist(),
            "cov": None if self.covariance is None else self.covariance.to_dict(),
            "objective": float(self.objective),
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, OptimReport):
        return obj.to_dict()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _check_series(series: M.SeriesWindow, spec: M.ModelSpec):
    series.for_spec(spec)
    return series.x, series.lags


def u_n_terms(rho, series: M.SeriesWindow, spec: M.ModelSpec, weights: Weights = DEFAULT_WEIGHTS):
    """``U_n`` with its gradient and Hessian in ``rho``."""
    x, Z = _check_series(series, spec)
    rho = np.asarray(rho, dtype=float).reshape(-1)
    m = M.mean(spec, rho, Z)
    dm = M.grad_mean(spec, rho, Z)
    d2m = M.hess_mean(spec, rho, Z)
    lam2 = weights.lam2(Z)
    r = x - m
    val = float(np.sum(r * r * lam2))
    grad = -2.0 * dm.T @ (lam2 * r)
    hess = 2.0 * (dm.T * lam2) @ dm - 2.0 * np.einsum("n,nij->ij", lam2 * r, d2m)
    return val, grad, hess


def u_n(rho, series, spec, weights: Weights = DEFAULT_WEIGHTS) -> float:
    return u_n_terms(rho, series, spec, weights)[0]


def s_n_terms(psi, series: M.SeriesWindow, spec: M.ModelSpec, weights: Weights = DEFAULT_WEIGHTS,
              check: bool = True):
    """``S_n`` with its gradient and Hessian in ``theta`` (``rho`` held fixed)."""
    x, Z = _check_series(series, spec)
    psi = psi if isinstance(psi, M.ParamVector) else M.ParamVector.from_psi(spec, psi)
    M.check_dims(spec, psi)
    r = x - M.mean(spec, psi.rho, Z)
    vt = M.vol_terms(spec, psi.theta, Z, order=2, check=check)
    sig = vt.sigma
    g2 = weights.gamma2(Z)
    e = r * r - sig * sig
    val = float(np.sum(e * e * g2))
    # d(sigma^2) = 2 sigma d sigma
    dv = 2 * sig[:, None] * vt.dsigma
    grad = -2.0 * dv.T @ (g2 * e)
    d2v = 2 * np.einsum("ni,nj->nij", vt.dsigma, vt.dsigma) + 2 * sig[:, None, None] * vt.d2sigma
    hess = 2.0 * (dv.T * g2) @ dv - 2.0 * np.einsum("n,nij->ij", g2 * e, d2v)
    return val, grad, hess


def s_n(psi, series, spec, weights: Weights = DEFAULT_WEIGHTS) -> float:
    return s_n_terms(psi, series, spec, weights)[0]


def _step1(series, spec, weights, rho0, numeric):
    x, Z = series.x, series.lags
    if spec.n_rho == 0:
        return np.zeros(0), None
    if not numeric:
        B = M.mean_design(spec, Z)
        rho = solve_linear_lsq(LinearLSQProblem(B, x, weights.lam2(Z)))
        return rho, None
    rep = minimize(
        lambda r: _scaled(u_n_terms(r, series, spec, weights), series.n),
        rho0,
        None,
    )
    return rep.argmin, rep


def _scaled(terms, n):
    f, g, H = terms
    return f / n, g / n, H / n


def _clamp_theta(spec, theta):
    theta = np.array(theta, dtype=float)
    clamped = False
    if theta[0] < THETA0_FLOOR:
        theta[0] = THETA0_FLOOR
        clamped = True
    if spec.vol_family == "arch":
        neg = theta[1:] < 0
        if np.any(neg):
            theta[1:][neg] = 0.0
            clamped = True
    return theta, clamped


def _default_theta(spec, resid):
    v = max(float(np.mean(resid * resid)), 1e-4)
    if spec.vol_family == "constant":
        return np.array([v])
    if spec.vol_family == "arch":
        return np.concatenate([[0.8 * v], np.full(spec.vol_order, 0.2 / spec.vol_order)])
    # garch: c/(1-a) + b sum a^{j-1} E X^2 ~ v
    a, b = 0.3, 0.2
    return np.array([v * (1 - a) * (1 - b / (1 - a)), a, b])


def _step2(series, spec, weights, rho, theta0, numeric):
    x, Z = series.x, series.lags
    resid = x - M.mean(spec, rho, Z)
    if spec.variance_is_linear and not numeric:
        W = M.variance_design(spec, Z)
        theta = solve_linear_lsq(LinearLSQProblem(W, resid * resid, weights.gamma2(Z)))
        theta, clamped = _clamp_theta(spec, theta)
        return theta, clamped, None
    if theta0 is None:
        theta0 = _default_theta(spec, resid)
    constraints = spec.theta_transforms()
    start = Transform(constraints, spec.n_theta).interior(theta0)
    if not M.theta_feasible(spec, start):
        start = _default_theta(spec, resid)

    def obj(th):
        if not M.theta_feasible(spec, th):
            return np.inf, None, None
        return _scaled(s_n_terms(np.concatenate([rho, th]), series, spec, weights), series.n)

    rep = minimize(obj, start, constraints)
    return rep.argmin, False, rep


def fit_cls(
    series: M.SeriesWindow,
    spec: M.ModelSpec,
    weights: Weights = DEFAULT_WEIGHTS,
    init: M.ParamVector | None = None,
    numeric: bool = False,
    covariance: bool = True,
) -> EstimationResult:
    """Two-step conditional least-squares fit.

    Parameters
    ----------
    numeric
        Force the Newton minimiser on both steps even where a closed form
        exists (used to cross-check the closed forms).
    covariance
        Also compute the plug-in covariance estimate; a singular information
        block is then reported in ``diagnostics`` rather than raised.
    """
    series.for_spec(spec)
    if series.n <= spec.n_rho + spec.n_theta:
        raise InvalidArgument(
            f"need more than {spec.n_rho + spec.n_theta} observations, got {series.n}"
        )
    if init is not None:
        M.check_dims(spec, init)
        rho0, theta0 = init.rho, init.theta
    else:
        rho0, theta0 = np.zeros(spec.n_rho), None
    rho, rep1 = _step1(series, spec, weights, rho0, numeric)
    theta, clamped, rep2 = _step2(series, spec, weights, rho, theta0, numeric)
    psi = M.ParamVector(rho, theta)
    diagnostics: dict = {"theta_clamped": clamped, "converged": True}
    for name, rep in (("step1", rep1), ("step2", rep2)):
        if rep is not None:
            diagnostics[name] = rep
            diagnostics["converged"] = diagnostics["converged"] and rep.converged
    cov = None
    if covariance:
        try:
            cov = estimate_delta(series, psi, spec, weights)
        except SingularInformationError as exc:
            diagnostics["covariance_error"] = str(exc)
    objective = s_n(psi, series, spec, weights)
    return EstimationResult(psi, cov, objective, "cls", series.n, spec, diagnostics)


def _inv(A, what):
    A = np.atleast_2d(A)
    if A.size == 0:
        return A
    try:
        cond = np.linalg.cond(A)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularInformationError(f"{what} is numerically singular (cond={cond:.3g})")
    return np.linalg.inv(A)


def estimate_delta(
    series: M.SeriesWindow,
    psi_hat: M.ParamVector,
    spec: M.ModelSpec,
    weights: Weights = DEFAULT_WEIGHTS,
) -> CovarianceEstimate:
    """Plug-in estimate of the asymptotic covariance of ``sqrt(n)(psi_cls - psi)``.

    The information blocks are the empirical Hessians ``(1/n) d2 U_n`` and
    ``(1/n) d2_theta S_n``; the score covariances are sample averages with the
    standardised residual moments ``E eps^3`` and ``E (eps^2 - 1)^2``.
    """
    x, Z = _check_series(series, spec)
    n = series.n
    I, J = spec.n_rho, spec.n_theta
    rho, theta = psi_hat.rho, psi_hat.theta
    phi11 = u_n_terms(rho, series, spec, weights)[2] / n
    phi22 = s_n_terms(psi_hat, series, spec, weights, check=False)[2] / n
    vt = M.vol_terms(spec, theta, Z, order=1, check=False)
    sig, dsig = vt.sigma, vt.dsigma
    dm = M.grad_mean(spec, rho, Z)
    eps = (x - M.mean(spec, rho, Z)) / sig
    third = float(np.mean(eps**3))
    fourth_c = float(np.mean((eps * eps - 1) ** 2))
    lam2, g2 = weights.lam2(Z), weights.gamma2(Z)

    P11 = _inv(phi11, "Phi11") if I else np.zeros((0, 0))
    P22 = _inv(phi22, "Phi22")
    A11 = 4.0 * (dm.T * (lam2 * lam2 * sig**2)) @ dm / n
    A12 = 8.0 * (dm.T * (lam2 * g2 * sig**4)) @ dsig / n * third
    A22 = 16.0 * (dsig.T * (g2 * g2 * sig**6)) @ dsig / n * fourth_c
    D11 = P11.T @ A11 @ P11
    D12 = P11.T @ A12 @ P22
    D22 = P22.T @ A22 @ P22
    delta = np.block([[D11, D12], [D12.T, D22]])
    delta = 0.5 * (delta + delta.T)
    return CovarianceEstimate(phi11, phi22, delta, third, fourth_c)
