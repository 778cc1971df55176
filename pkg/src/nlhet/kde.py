"""
Standardised residuals and Gaussian-kernel estimates of the noise density and
its derivatives,

    f_n^(p)(x) = 1 / (n h^(p+1)) sum_i K^(p)((x - eps_i) / h),

with ``K`` the standard normal density, ``K'(u) = -u K(u)`` and
``K''(u) = (u^2 - 1) K(u)``.

The default bandwidth is ``h = c n^(-1/9)`` with
``c = 0.9 min(sd, IQR) / 1.34`` (rule ``"default"``). Rule ``"classical"`` uses
Silverman's ``c = 0.9 min(sd, IQR / 1.34)`` with the same rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from nlhet import model as M
from nlhet.errors import InvalidArgument

RATE = -1.0 / 9.0
GRID_COUNT = 401
GRID_HALF_WIDTH_SD = 4.5
_INV_SQRT_2PI = 1.0 / math.sqrt(2 * math.pi)


def residuals(series: M.SeriesWindow, psi: M.ParamVector, spec: M.ModelSpec) -> np.ndarray:
    """``eps_i(psi) = (X_i - m(rho; Z_{i-1})) / sigma(theta; Z_{i-1})``."""
    M.check_params(spec, psi)
    series.for_spec(spec)
    Z = series.lags
    sig = M.vol_terms(spec, psi.theta, Z).sigma
    return (series.x - M.mean(spec, psi.rho, Z)) / sig


def bandwidth_constant(sd: float, iqr: float, rule: str = "default") -> float:
    if rule == "default":
        return 0.9 * min(sd, iqr) / 1.34
    if rule == "classical":
        return 0.9 * min(sd, iqr / 1.34)
    raise InvalidArgument(f"unknown bandwidth rule {rule!r}")


def bandwidth(values, rule: str = "default") -> float:
    """``c n^(-1/9)`` with ``c`` from the sample SD (ddof=1) and interquartile range."""
    v = np.asarray(values, dtype=float).reshape(-1)
    n = v.size
    if n < 5:
        raise InvalidArgument("bandwidth needs at least 5 values")
    sd = float(np.std(v, ddof=1))
    q1, q3 = np.percentile(v, [25, 75])
    c = bandwidth_constant(sd, float(q3 - q1), rule)
    if not c > 0:
        raise InvalidArgument("residuals have zero spread; bandwidth undefined")
    return c * n**RATE


def kernel(u, p: int = 0):
    u = np.asarray(u, dtype=float)
    k = _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    if p == 0:
        return k
    if p == 1:
        return -u * k
    if p == 2:
        return (u * u - 1) * k
    if p == 3:
        return (3 * u - u**3) * k
    raise InvalidArgument("kernel derivative order must be in 0..3")


def density_estimate(resid, h: float, p: int, x):
    """``f_n^(p)`` at ``x`` (scalar or array)."""
    if p not in (0, 1, 2):
        raise InvalidArgument("order p must be 0, 1 or 2")
    if not h > 0:
        raise InvalidArgument("bandwidth must be positive")
    e = np.asarray(resid, dtype=float).reshape(-1)
    xs = np.asarray(x, dtype=float)
    flat = xs.reshape(-1)
    out = np.empty(flat.size)
    # chunk over x to bound memory on long residual vectors
    step = max(1, 2_000_000 // max(e.size, 1))
    for a in range(0, flat.size, step):
        u = (flat[a : a + step, None] - e[None, :]) / h
        out[a : a + step] = kernel(u, p).sum(axis=1)
    out /= e.size * h ** (p + 1)
    return float(out[0]) if xs.ndim == 0 else out.reshape(xs.shape)


@dataclass(frozen=True)
class KernelEstimate:
    order: int
    bandwidth: float
    grid: np.ndarray
    values: np.ndarray
    n: int
    truth: np.ndarray | None = None

    def sup_distance(self, lo: float = -np.inf, hi: float = np.inf) -> float:
        if self.truth is None:
            raise InvalidArgument("no true density attached")
        mask = (self.grid >= lo) & (self.grid <= hi)
        return float(np.max(np.abs(self.values[mask] - self.truth[mask])))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# order={self.order} bandwidth={self.bandwidth!r} n={self.n}\n")
            w = csv.writer(fh, lineterminator="\n")
            cols = ["x", "estimate"] + (["truth"] if self.truth is not None else [])
            w.writerow(cols)
            for k in range(self.grid.size):
                row = [repr(float(self.grid[k])), repr(float(self.values[k]))]
                if self.truth is not None:
                    row.append(repr(float(self.truth[k])))
                w.writerow(row)


def default_grid(resid) -> tuple[float, float, int]:
    e = np.asarray(resid, dtype=float)
    mu, sd = float(np.mean(e)), float(np.std(e))
    return mu - GRID_HALF_WIDTH_SD * sd, mu + GRID_HALF_WIDTH_SD * sd, GRID_COUNT


def density_curve(
    resid,
    p: int = 0,
    grid: tuple[float, float, int] | None = None,
    h: float | None = None,
    rule: str = "default",
    noise=None,
    bandwidth_from=None,
) -> KernelEstimate:
    """Evaluate ``f_n^(p)`` on a uniform grid.

    Parameters
    ----------
    grid
        ``(lo, hi, count)``; defaults to the residual mean +- 4.5 SDs, 401 points.
    h
        Explicit bandwidth. When None the bandwidth rule is applied to
        ``bandwidth_from`` (default: the residuals themselves).
    noise
        Optional :class:`~nlhet.noise.NoiseModel` whose ``f^(p)`` is attached
        as the ``truth`` column.
    """
    e = np.asarray(resid, dtype=float).reshape(-1)
    if p not in (0, 1, 2):
        raise InvalidArgument("order p must be 0, 1 or 2")
    lo, hi, count = grid if grid is not None else default_grid(e)
    if count < 2 or not hi > lo:
        raise InvalidArgument("grid needs count >= 2 and hi > lo")
    if h is None:
        h = bandwidth(e if bandwidth_from is None else bandwidth_from, rule)
    xs = np.linspace(lo, hi, int(count))
    vals = density_estimate(e, h, p, xs)
    truth = None if noise is None else np.asarray(noise.density(xs, p), dtype=float)
    return KernelEstimate(p, float(h), xs, vals, e.size, truth)
