"""
Conditional maximum likelihood.

With ``eps_i(psi) = [X_i - m(rho; Z_{i-1})] / sigma(theta; Z_{i-1})`` the
conditional log-likelihood is

    L_n(psi) = sum_i { -log sigma(theta; Z_{i-1}) + log f(eps_i(psi)) }.

We minimise ``Q_n = -L_n`` with the analytic gradient and Hessian:

    d_rho Q      = -sum sigma^-1 dm xi
    d_theta Q    = -sum sigma^-1 dsigma (zeta - 1)
    d2_rho Q     = sum [ -sigma^-1 d2m xi + sigma^-2 dm dm' xi_dot ]
    d2_rho,theta = sum sigma^-2 (xi + zeta_dot) dm dsigma'
    d2_theta Q   = sum [ (zeta - 1)(sigma^-2 dsigma dsigma' - sigma^-1 d2sigma)
                         + sigma^-2 dsigma dsigma' zeta_ddot ]

where ``xi = phi(eps)``, ``xi_dot = phi'(eps)``, ``zeta = eps phi(eps)``,
``zeta_dot = eps phi'(eps)`` and ``zeta_ddot = zeta + eps zeta_dot``.

The covariance uses the positive definite information ``J = (1/n) d2 Q_n``
and reports the sandwich ``J^-1 Lambda J^-1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from nlhet import model as M
from nlhet import noise as N
from nlhet.cls import EstimationResult, fit_cls
from nlhet.errors import InvalidArgument, SingularInformationError, UnsupportedOperation
from nlhet.optimize import Transform, minimize

log = logging.getLogger(__name__)

# share of floored sigma values above which the fit is flagged as degenerate
FLOOR_WARN_SHARE = 0.01


@dataclass(frozen=True)
class CmlCovariance:
    info_hat: np.ndarray
    lambda_hat: np.ndarray
    sandwich: np.ndarray

    @property
    def asymptotic(self) -> np.ndarray:
        return self.sandwich

    def info_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.info_hat)

    def to_dict(self) -> dict:
        return {
            "info_hat": self.info_hat.tolist(),
            "lambda_hat": self.lambda_hat.tolist(),
            "sandwich": self.sandwich.tolist(),
            "info_inverse": self.info_inverse().tolist(),
        }


def _require_eligible(noise: N.NoiseModel):
    if not noise.cml_eligible:
        raise UnsupportedOperation(f"{noise.family} is sampling-only; use the cls method")


def _pieces(psi, series: M.SeriesWindow, spec: M.ModelSpec, order: int, check: bool = True):
    series.for_spec(spec)
    psi = psi if isinstance(psi, M.ParamVector) else M.ParamVector.from_psi(spec, psi)
    M.check_dims(spec, psi)
    Z = series.lags
    vt = M.vol_terms(spec, psi.theta, Z, order=order, check=check)
    eps = (series.x - M.mean(spec, psi.rho, Z)) / vt.sigma
    return psi, Z, vt, eps


def log_likelihood(psi, series, spec, noise: N.NoiseModel) -> float:
    _require_eligible(noise)
    _, _, vt, eps = _pieces(psi, series, spec, 0)
    return float(np.sum(noise.log_density(eps) - np.log(vt.sigma)))


def q_n_terms(psi, series, spec, noise: N.NoiseModel, check: bool = True):
    """``Q_n = -L_n`` with its gradient and Hessian in ``psi``."""
    _require_eligible(noise)
    psi, Z, vt, eps = _pieces(psi, series, spec, 2, check=check)
    sig, ds, d2s = vt.sigma, vt.dsigma, vt.d2sigma
    dm = M.grad_mean(spec, psi.rho, Z)
    d2m = M.hess_mean(spec, psi.rho, Z)
    xi = N.xi(noise, eps)
    xid = N.xi_dot(noise, eps)
    ze = N.zeta(noise, eps)
    zed = N.zeta_dot(noise, eps)
    zedd = ze + eps * zed
    inv = 1.0 / sig
    inv2 = inv * inv

    val = float(np.sum(np.log(sig) - noise.log_density(eps)))
    g_rho = -dm.T @ (inv * xi)
    g_theta = -ds.T @ (inv * (ze - 1))
    H11 = -np.einsum("n,nij->ij", inv * xi, d2m) + (dm.T * (inv2 * xid)) @ dm
    H12 = (dm.T * (inv2 * (xi + zed))) @ ds
    H22 = (ds.T * (inv2 * (ze - 1 + zedd))) @ ds - np.einsum("n,nij->ij", inv * (ze - 1), d2s)
    grad = np.concatenate([g_rho, g_theta])
    hess = np.block([[H11, H12], [H12.T, H22]])
    return val, grad, hess


def score(psi, series, spec, noise: N.NoiseModel) -> np.ndarray:
    """Gradient of ``L_n``."""
    return -q_n_terms(psi, series, spec, noise)[1]


def floor_share(psi, series, spec) -> float:
    _, _, vt, _ = _pieces(psi, series, spec, 0)
    return float(np.mean(vt.floored))


def _constraints(spec):
    return [None] * spec.n_rho + spec.theta_transforms()


def fit_cml(
    series: M.SeriesWindow,
    spec: M.ModelSpec,
    noise: N.NoiseModel,
    init: M.ParamVector | None = None,
    covariance: bool = True,
    empirical_lambda: bool = False,
    tol_g: float = 1e-8,
    max_iter: int = 200,
) -> EstimationResult:
    """Maximise the conditional likelihood, starting from the CLS fit by default."""
    _require_eligible(noise)
    series.for_spec(spec)
    if series.n <= spec.n_rho + spec.n_theta:
        raise InvalidArgument(
            f"need more than {spec.n_rho + spec.n_theta} observations, got {series.n}"
        )
    if init is None:
        init = fit_cls(series, spec, covariance=False).psi_hat
    M.check_params(spec, init)
    n = series.n
    cons = _constraints(spec)
    tr = Transform(cons, spec.n_rho + spec.n_theta)
    start = tr.interior(init.psi)

    def obj(psi):
        if not M.theta_feasible(spec, psi[spec.n_rho:]):
            return np.inf, None, None
        f, g, H = q_n_terms(psi, series, spec, noise, check=False)
        return f / n, g / n, H / n

    rep = minimize(obj, start, cons, tol_g=tol_g, max_iter=max_iter)
    psi_hat = M.ParamVector.from_psi(spec, rep.argmin)
    ll = log_likelihood(psi_hat, series, spec, noise)
    ll_init = log_likelihood(init, series, spec, noise)
    used_init = False
    if ll < ll_init:
        # interior nudge of a boundary start lost likelihood; keep the start
        psi_hat, ll, used_init = init, ll_init, True
    diagnostics = {
        "converged": rep.converged,
        "optimizer": rep,
        "boundary_maximum": any(rep.constraint_active),
        "returned_init": used_init,
        "floor_share": floor_share(psi_hat, series, spec),
    }
    if diagnostics["floor_share"] > FLOOR_WARN_SHARE:
        diagnostics["degenerate_volatility"] = True
        log.warning("sigma hit its floor on %.1f%% of points", 100 * diagnostics["floor_share"])
    cov = None
    if covariance:
        try:
            cov = estimate_cml_covariance(series, psi_hat, spec, noise, empirical_lambda)
        except SingularInformationError as exc:
            diagnostics["covariance_error"] = str(exc)
    return EstimationResult(psi_hat, cov, -ll, "cml", n, spec, diagnostics)


def estimate_cml_covariance(
    series: M.SeriesWindow,
    psi_hat: M.ParamVector,
    spec: M.ModelSpec,
    noise: N.NoiseModel,
    empirical_lambda: bool = False,
) -> CmlCovariance:
    """Observed information and sandwich covariance at ``psi_hat``.

    ``Lambda`` combines sample averages of ``sigma^-2 dm dm'``,
    ``sigma^-2 dm dsigma'`` and ``sigma^-2 dsigma dsigma'`` with the noise
    integrals ``int phi^2 f``, ``int phi (x phi - 1) f`` and
    ``int (x phi - 1)^2 f``. With ``empirical_lambda`` those integrals are
    replaced by residual averages.
    """
    _require_eligible(noise)
    n = series.n
    _, _, H = q_n_terms(psi_hat, series, spec, noise, check=False)
    info = H / n
    info = 0.5 * (info + info.T)
    psi, Z, vt, eps = _pieces(psi_hat, series, spec, 1, check=False)
    inv2 = 1.0 / vt.sigma**2
    dm = M.grad_mean(spec, psi.rho, Z)
    ds = vt.dsigma
    if empirical_lambda:
        phi = noise.score_phi(eps)
        g2 = eps * phi - 1
        a11, a12, a22 = np.mean(phi * phi), np.mean(phi * g2), np.mean(g2 * g2)
    else:
        mom = noise.moments()
        a11, a12, a22 = mom.int_phi_sq, mom.int_lambda12, mom.int_lambda22
    L11 = (dm.T * inv2) @ dm / n * a11
    L12 = (dm.T * inv2) @ ds / n * a12
    L22 = (ds.T * inv2) @ ds / n * a22
    lam = np.block([[L11, L12], [L12.T, L22]])
    try:
        cond = np.linalg.cond(info)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularInformationError(f"observed information is singular (cond={cond:.3g})")
    try:
        c = linalg.cho_factor(info)
        left = linalg.cho_solve(c, lam)
        sandwich = linalg.cho_solve(c, left.T).T
    except linalg.LinAlgError:
        Jinv = np.linalg.inv(info)
        sandwich = Jinv @ lam @ Jinv
    sandwich = 0.5 * (sandwich + sandwich.T)
    return CmlCovariance(info, lam, sandwich)


def arch1_likelihood_equations(theta, series: M.SeriesWindow) -> np.ndarray:
    """Gaussian ARCH(1) likelihood equations, as sums over the sample.

    Returns the two left-hand sides
    ``sum (1/s_i - X_i^2/s_i^2)`` and ``sum (X_{i-1}^2/s_i - X_i^2 X_{i-1}^2/s_i^2)``
    with ``s_i = theta_0 + theta_1 X_{i-1}^2``.
    """
    t0, t1 = np.asarray(theta, dtype=float)
    x = series.x
    z2 = series.lags[:, 0] ** 2
    s = t0 + t1 * z2
    x2 = x * x
    return np.array([np.sum(1 / s - x2 / s**2), np.sum(z2 / s - x2 * z2 / s**2)])
