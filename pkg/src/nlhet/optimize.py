"""
Newton minimiser with reparametrised box constraints, weighted linear least
squares, and finite-difference checks.

Constraints are given per coordinate as

* ``"free"`` (or ``None``): identity,
* ``"positive"``: ``x = exp(u)``,
* ``("interval", lo, hi)``: ``x = lo + (hi - lo) / (1 + exp(-u))``.

Newton steps are taken in ``u``. The Hessian is shifted by a ridge when it is
not positive definite and steps are accepted on Armijo decrease. Once the
objective is flat at working precision, a full Newton step is accepted if it
halves the gradient and raises the objective by no more than rounding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.special import expit, logit

from nlhet.errors import InvalidArgument, SingularSystemError

log = logging.getLogger(__name__)

TOL_G = 1e-8
MAX_ITER = 200
RIDGE_START = 1e-8
RIDGE_FACTOR = 10.0
# relative distance to a bound below which a coordinate is reported as active
ACTIVE_TOL = 1e-6
POLISH_STEPS = 2


@dataclass
class OptimReport:
    argmin: np.ndarray
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool
    constraint_active: list[bool] = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "argmin": np.asarray(self.argmin).tolist(),
            "objective": float(self.objective),
            "gradient_norm": float(self.gradient_norm),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "constraint_active": [bool(c) for c in self.constraint_active],
            "message": self.message,
        }


class Transform:
    """Elementwise map ``x = g(u)`` with first and second derivatives."""

    def __init__(self, specs, dim: int):
        if specs is None:
            specs = ["free"] * dim
        if len(specs) != dim:
            raise InvalidArgument(f"{len(specs)} constraint entries for {dim} parameters")
        self.kind = np.zeros(dim, dtype=int)
        self.lo = np.zeros(dim)
        self.hi = np.ones(dim)
        for k, s in enumerate(specs):
            if s is None or s == "free":
                self.kind[k] = 0
            elif s == "positive":
                self.kind[k] = 1
            elif isinstance(s, (tuple, list)) and s[0] == "interval":
                lo, hi = float(s[1]), float(s[2])
                if not hi > lo:
                    raise InvalidArgument("empty interval constraint")
                self.kind[k], self.lo[k], self.hi[k] = 2, lo, hi
            else:
                raise InvalidArgument(f"unknown constraint {s!r}")

    def to_x(self, u):
        u = np.asarray(u, dtype=float)
        x = u.copy()
        pos, itv = self.kind == 1, self.kind == 2
        x[pos] = np.exp(u[pos])
        x[itv] = self.lo[itv] + (self.hi[itv] - self.lo[itv]) * expit(u[itv])
        return x

    def to_u(self, x):
        x = np.asarray(x, dtype=float)
        u = x.copy()
        pos, itv = self.kind == 1, self.kind == 2
        if np.any(x[pos] <= 0):
            raise InvalidArgument("positive coordinate is not > 0")
        u[pos] = np.log(x[pos])
        t = (x[itv] - self.lo[itv]) / (self.hi[itv] - self.lo[itv])
        if np.any((t <= 0) | (t >= 1)):
            raise InvalidArgument("interval coordinate is not strictly inside its bounds")
        u[itv] = logit(t)
        return u

    def derivs(self, u):
        """``dx/du`` and ``d2x/du2``."""
        u = np.asarray(u, dtype=float)
        d1 = np.ones_like(u)
        d2 = np.zeros_like(u)
        pos, itv = self.kind == 1, self.kind == 2
        e = np.exp(u[pos])
        d1[pos] = d2[pos] = e
        s = expit(u[itv])
        w = self.hi[itv] - self.lo[itv]
        d1[itv] = w * s * (1 - s)
        d2[itv] = w * s * (1 - s) * (1 - 2 * s)
        return d1, d2

    def interior(self, x, margin: float = 1e-4):
        """Pull ``x`` strictly inside the feasible set so ``to_u`` is defined."""
        x = np.array(x, dtype=float)
        pos, itv = self.kind == 1, self.kind == 2
        x[pos] = np.maximum(x[pos], margin)
        w = self.hi[itv] - self.lo[itv]
        x[itv] = np.clip(x[itv], self.lo[itv] + margin * w, self.hi[itv] - margin * w)
        return x

    def active(self, x) -> list[bool]:
        x = np.asarray(x, dtype=float)
        out = []
        for k in range(x.size):
            if self.kind[k] == 1:
                out.append(bool(x[k] <= ACTIVE_TOL))
            elif self.kind[k] == 2:
                w = self.hi[k] - self.lo[k]
                out.append(bool(min(x[k] - self.lo[k], self.hi[k] - x[k]) <= ACTIVE_TOL * w))
            else:
                out.append(False)
        return out


def _evaluate(fun, transform: Transform, u):
    x = transform.to_x(u)
    try:
        f, g, H = fun(x)
    except (InvalidArgument, FloatingPointError, ValueError):
        return np.inf, None, None
    f = float(f)
    if not np.isfinite(f):
        return np.inf, None, None
    d1, d2 = transform.derivs(u)
    g = np.asarray(g, dtype=float)
    gu = d1 * g
    Hu = np.asarray(H, dtype=float) * np.outer(d1, d1) + np.diag(d2 * g)
    return f, gu, Hu


def _newton_direction(g, H):
    ridge = 0.0
    eye = np.eye(g.size)
    scale = max(1.0, float(np.max(np.abs(np.diag(H))))) if g.size else 1.0
    while True:
        try:
            c = linalg.cho_factor(H + ridge * scale * eye, check_finite=True)
            return -linalg.cho_solve(c, g)
        except (linalg.LinAlgError, ValueError):
            ridge = RIDGE_START if ridge == 0.0 else ridge * RIDGE_FACTOR
            if ridge > 1e12:
                return -g


def minimize(
    fun: Callable,
    x0,
    constraints=None,
    tol_g: float = TOL_G,
    max_iter: int = MAX_ITER,
) -> OptimReport:
    """Minimise a twice-differentiable objective.

    Parameters
    ----------
    fun
        ``fun(x) -> (value, gradient, hessian)`` in the original coordinates.
        Returning a non-finite value (or raising ``InvalidArgument``) marks a
        point as infeasible.
    x0
        Feasible starting point.
    constraints
        Per-coordinate descriptors, see module docstring.
    tol_g
        Convergence threshold on the max-norm of the gradient in transformed
        coordinates.

    Returns
    -------
    OptimReport
        ``converged`` is False when ``max_iter`` is hit or the line search
        stalls; no exception is raised in that case.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    tr = Transform(constraints, x0.size)
    u = tr.to_u(x0)
    f, g, H = _evaluate(fun, tr, u)
    if not np.isfinite(f):
        raise InvalidArgument("objective is not finite at the initial point")
    it = 0
    converged = False
    message = ""
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    while True:
        if gnorm <= tol_g:
            converged = True
            break
        if it >= max_iter:
            message = "max_iter reached"
            break
        it += 1
        d = _newton_direction(g, H)
        if not float(g @ d) < 0:
            d = -g
        step = 1.0
        accepted = False
        for _ in range(60):
            u_new = u + step * d
            f_new, g_new, H_new = _evaluate(fun, tr, u_new)
            if f_new < f - 1e-4 * step * abs(float(g @ d)) or (
                f_new < f and step < 1e-6
            ):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # f is flat at working precision; a full Newton step is still
            # taken if it reduces the gradient without raising f beyond rounding
            u_new = u + _newton_direction(g, H)
            f_new, g_new, H_new = _evaluate(fun, tr, u_new)
            flat = 8 * np.finfo(float).eps * max(1.0, abs(f))
            if (
                g_new is None
                or not f_new <= f + flat
                or not float(np.max(np.abs(g_new))) < 0.5 * gnorm
            ):
                message = "line search stalled"
                break
        u, f, g, H = u_new, f_new, g_new, H_new
        gnorm = float(np.max(np.abs(g)))
    if converged:
        # full Newton steps past tol_g are nearly free and tighten stationarity
        for _ in range(POLISH_STEPS):
            if gnorm == 0.0:
                break
            u_new = u + _newton_direction(g, H)
            f_new, g_new, H_new = _evaluate(fun, tr, u_new)
            if g_new is None or not f_new <= f:
                break
            gn_new = float(np.max(np.abs(g_new)))
            if not gn_new < gnorm:
                break
            u, f, g, H, gnorm = u_new, f_new, g_new, H_new, gn_new
    x = tr.to_x(u)
    if not converged:
        log.debug("minimize did not converge: %s (gnorm=%g)", message, gnorm)
    return OptimReport(x, f, gnorm, it, converged, tr.active(x), message)


@dataclass
class LinearLSQProblem:
    design: np.ndarray
    response: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        self.response = np.asarray(self.response, dtype=float).reshape(-1)
        n = self.response.size
        if self.design.shape[0] != n:
            raise InvalidArgument("design and response have different lengths")
        if self.weights is None:
            self.weights = np.ones(n)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.size != n:
            raise InvalidArgument("weights have the wrong length")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise InvalidArgument("weights must be finite and nonnegative")


def solve_linear_lsq(problem: LinearLSQProblem) -> np.ndarray:
    """Minimise ``sum_i w_i (y_i - d_i . beta)^2``."""
    D, y, w = problem.design, problem.response, problem.weights
    k = D.shape[1]
    if k == 0:
        return np.zeros(0)
    sw = np.sqrt(w)
    A = D * sw[:, None]
    b = y * sw
    beta, _, rank, sv = np.linalg.lstsq(A, b, rcond=None)
    if rank < k or sv[-1] <= sv[0] * k * np.finfo(float).eps * max(A.shape):
        raise SingularSystemError(f"design has rank {rank} < {k}")
    return beta


def check_gradient(fun: Callable, point, h: float = 1e-6) -> float:
    """Max-norm relative error of ``fun(x)[1]`` against central differences of ``fun(x)[0]``."""
    x = np.asarray(point, dtype=float)
    g = np.asarray(fun(x)[1], dtype=float)
    fd = np.empty_like(g)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        fd[k] = (fun(x + e)[0] - fun(x - e)[0]) / (2 * e[k])
    return float(np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), np.finfo(float).tiny))


def check_hessian(grad: Callable, hess, point, h: float = 1e-6) -> float:
    """Max-norm relative error of ``hess`` against central differences of ``grad``."""
    x = np.asarray(point, dtype=float)
    H = np.asarray(hess, dtype=float)
    fd = np.empty_like(H)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        fd[:, k] = (np.asarray(grad(x + e)) - np.asarray(grad(x - e))) / (2 * e[k])
    return float(np.max(np.abs(fd - H)) / max(np.max(np.abs(H)), np.finfo(float).tiny))
