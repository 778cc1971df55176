import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from nlhet import model as M
from nlhet.cls import Weights, _clamp_theta, estimate_delta, fit_cls, s_n, s_n_terms, u_n, u_n_terms
from nlhet.errors import InvalidArgument
from nlhet.noise import NoiseModel
from nlhet.optimize import check_gradient, check_hessian

from conftest import AR1_CONST, ARCH1, EXPAR_ARCH, EXPAR_I, FAMILY_CASES, SkewNoise, ZeroNoise

ZERO_CONST = M.ModelSpec("zero", "constant")


class SignNoise:
    """Random signs: ``eps^2 = 1`` so squared residuals equal ``sigma^2`` exactly."""

    def sample(self, rng, size):
        return rng.choice([-1.0, 1.0], size)


def test_u_n_hand_value():
    w = M.SeriesWindow([], [1.0, 2.0])
    assert u_n([], w, ZERO_CONST) == 5.0
    zero = Weights(lam=lambda Z: 0.0)
    assert u_n([], w, ZERO_CONST, zero) == 0.0


def test_s_n_hand_value():
    w = M.SeriesWindow([], [2.0])
    assert s_n(M.ParamVector([], [1.0]), w, ZERO_CONST) == 9.0
    assert s_n(M.ParamVector([], [1.0]), w, ZERO_CONST, Weights(gamma=lambda Z: 0.0)) == 0.0


def test_u_n_vanishes_on_noiseless_series():
    psi = M.ParamVector([0.7], [0.3, 0.2])
    spec = M.ModelSpec("ar", "arch", mean_order=1, vol_order=1)
    w = M.simulate_series(spec, psi, ZeroNoise(), 30, burn_in=0, initial=2.0)
    assert u_n(psi.rho, w, spec) == 0.0


def test_s_n_vanishes_when_residuals_match_variance():
    psi = M.ParamVector([], [0.4, 0.3])
    w = M.simulate_series(ARCH1, psi, SignNoise(), 200, seed=1)
    assert s_n(psi, w, ARCH1) == pytest.approx(0.0, abs=1e-24)


def test_ar1_closed_form_oracle():
    w = M.simulate_series(AR1_CONST, M.ParamVector([0.5], [0.8]), NoiseModel(), 500, seed=7)
    x, z = w.x, w.lags[:, 0]
    rho = np.sum(x * z) / np.sum(z * z)
    theta0 = np.mean((x - rho * z) ** 2)
    res = fit_cls(w, AR1_CONST)
    assert abs(res.psi_hat.rho[0] - rho) < 1e-12
    assert abs(res.psi_hat.theta[0] - theta0) < 1e-12


def test_arch_step2_is_squared_residual_regression():
    w = M.simulate_series(EXPAR_ARCH, M.ParamVector([0.3], [0.5, 0.2]), NoiseModel(), 400, seed=3)
    z = w.lags[:, 0]
    rho = np.sum(w.x * z) / np.sum(z * z)
    r2 = (w.x - rho * z) ** 2
    theta = np.linalg.lstsq(np.column_stack([np.ones_like(z), z * z]), r2, rcond=None)[0]
    res = fit_cls(w, EXPAR_ARCH)
    assert not res.diagnostics["theta_clamped"]
    np.testing.assert_allclose(res.psi_hat.psi, [rho, *theta], atol=1e-10)


@pytest.mark.parametrize("case", [0, 1, 2, 3, 4, 5])
def test_closed_form_and_numeric_paths_agree(case):
    spec, psi = FAMILY_CASES[case]
    w = M.simulate_series(spec, psi, NoiseModel(), 1000, seed=case)
    a = fit_cls(w, spec, covariance=False)
    if a.diagnostics["theta_clamped"]:
        pytest.skip("closed form hit the boundary")
    b = fit_cls(w, spec, numeric=True, covariance=False)
    assert b.converged
    np.testing.assert_allclose(a.psi_hat.psi, b.psi_hat.psi, atol=1e-8)


@pytest.mark.parametrize("case", range(len(FAMILY_CASES)))
@given(seed=st.integers(0, 2**32 - 1))
def test_objective_derivatives(case, seed):
    spec, psi = FAMILY_CASES[case]
    rng = np.random.default_rng(seed)
    w = M.simulate_series(spec, psi, NoiseModel(), 60, seed=int(seed % 1000))
    rho = psi.rho + rng.normal(scale=0.2, size=psi.rho.size)
    theta = psi.theta * np.exp(rng.normal(scale=0.2, size=psi.theta.size))
    if spec.n_rho:
        f = lambda r: u_n_terms(r, w, spec)  # noqa: E731
        assert check_gradient(f, rho) < 1e-6
        assert check_hessian(lambda r: f(r)[1], f(rho)[2], rho) < 1e-5
    g = lambda t: s_n_terms(np.concatenate([rho, t]), w, spec, check=False)  # noqa: E731
    assert check_gradient(g, theta) < 1e-6
    assert check_hessian(lambda t: g(t)[1], g(theta)[2], theta) < 1e-5


def test_clamp():
    t, c = _clamp_theta(ARCH1, [-0.1, -0.2])
    np.testing.assert_array_equal(t, [1e-8, 0.0])
    assert c
    t, c = _clamp_theta(ARCH1, [0.3, 0.1])
    assert not c


@given(seed=st.integers(0, 2**32 - 1))
def test_estimates_always_feasible(seed):
    # short series from a near-boundary truth regularly push the regression outside
    w = M.simulate_series(EXPAR_ARCH, M.ParamVector([0.6], [0.4, 0.05]), NoiseModel(), 30, seed=seed)
    res = fit_cls(w, EXPAR_ARCH)
    assert M.theta_feasible(EXPAR_ARCH, res.psi_hat.theta)
    if res.psi_hat.theta[1] == 0.0:
        assert res.diagnostics["theta_clamped"]


def test_delta_structure():
    w = M.simulate_series(EXPAR_ARCH, M.ParamVector([0.6], [0.4, 0.1]), NoiseModel(), 2000, seed=5)
    cov = fit_cls(w, EXPAR_ARCH).covariance
    D = cov.delta_hat
    np.testing.assert_array_equal(D, D.T)
    assert np.all(np.linalg.eigvalsh(D[:1, :1]) >= 0)
    assert np.all(np.linalg.eigvalsh(D[1:, 1:]) >= 0)


def test_delta11_ar1_constant_vol_hand_formula():
    w = M.simulate_series(AR1_CONST, M.ParamVector([0.5], [0.8]), NoiseModel(), 3000, seed=9)
    res = fit_cls(w, AR1_CONST)
    z = w.lags[:, 0]
    # Phi11 = 2 mean z^2, A11 = 4 theta0 mean z^2
    assert res.covariance.delta_hat[0, 0] == pytest.approx(res.psi_hat.theta[0] / np.mean(z * z), rel=1e-12)
    # population value sigma^2 / E X^2 = 1 - rho^2
    assert res.covariance.delta_hat[0, 0] == pytest.approx(0.75, abs=0.05)


def test_delta_against_brute_force_sandwich():
    w = M.simulate_series(EXPAR_ARCH, M.ParamVector([0.6], [0.4, 0.05]), NoiseModel(), 50_000, seed=4)
    res = fit_cls(w, EXPAR_ARCH)
    p = res.psi_hat
    Z, x = w.lags, w.x
    r = x - M.mean(EXPAR_ARCH, p.rho, Z)
    vt = M.vol_terms(EXPAR_ARCH, p.theta, Z, order=1)
    # per-observation scores of U_n and S_n
    s1 = -2 * r[:, None] * M.grad_mean(EXPAR_ARCH, p.rho, Z)
    s2 = -4 * ((r * r - vt.sigma**2) * vt.sigma)[:, None] * vt.dsigma
    S = np.hstack([s1, s2])
    info = np.zeros((3, 3))
    info[:1, :1] = u_n_terms(p.rho, w, EXPAR_ARCH)[2] / w.n
    info[1:, 1:] = s_n_terms(p, w, EXPAR_ARCH)[2] / w.n
    inv = np.linalg.inv(info)
    brute = inv @ (S.T @ S / w.n) @ inv.T
    D = res.covariance.delta_hat
    assert D[0, 0] == pytest.approx(brute[0, 0], rel=0.02)
    np.testing.assert_allclose(D[1:, 1:], brute[1:, 1:], rtol=0.25)


def test_delta12_vanishes_for_gaussian_and_not_for_skew_noise():
    psi = M.ParamVector([0.6], [0.4, 0.05])

    def corr12(noise):
        w = M.simulate_series(EXPAR_ARCH, psi, noise, 10_000, seed=0)
        D = fit_cls(w, EXPAR_ARCH).covariance.delta_hat
        return np.max(np.abs(D[0, 1:]) / np.sqrt(D[0, 0] * np.diag(D)[1:]))

    assert corr12(NoiseModel()) < 0.1
    assert corr12(SkewNoise()) > 0.2


def test_wald_statistic_band():
    psi = M.ParamVector([], [0.4, 0.3])
    stat = []
    for r in range(1000):
        w = M.simulate_series(ARCH1, psi, NoiseModel(), 400, seed=np.random.SeedSequence(55, spawn_key=(r,)))
        res = fit_cls(w, ARCH1)
        d = res.psi_hat.psi - psi.psi
        stat.append(w.n * d @ np.linalg.solve(res.covariance.delta_hat, d))
    q95 = np.quantile(stat, 0.95)
    chi = stats.chi2.ppf(0.95, 2)
    assert 0.8 * chi <= q95 <= 1.25 * chi


def test_garch_numeric_fit_recovers_truth():
    spec = M.ModelSpec("zero", "garch", trunc_lag=50)
    truth = np.array([0.1, 0.3, 0.2])
    w = M.simulate_series(spec, M.ParamVector([], truth), NoiseModel(), 5000, seed=1)
    res = fit_cls(w, spec)
    assert res.converged
    assert np.all(np.abs(res.psi_hat.theta - truth) < 3 * res.standard_errors())


def test_weights_change_the_fit():
    w = M.simulate_series(EXPAR_I, M.ParamVector([-0.5], [1.0]), NoiseModel(), 300, seed=2)
    a = fit_cls(w, EXPAR_I)
    b = fit_cls(w, EXPAR_I, Weights(lam=lambda Z: 1 / (1 + Z[:, 0] ** 2)))
    assert a.psi_hat.rho[0] != b.psi_hat.rho[0]
    assert abs(a.psi_hat.rho[0] - b.psi_hat.rho[0]) < 0.2


def test_too_short_series():
    w = M.SeriesWindow([0.1], [0.2, 0.3])
    with pytest.raises(InvalidArgument):
        fit_cls(w, EXPAR_ARCH)


def test_result_json():
    w = M.simulate_series(ARCH1, M.ParamVector([], [0.4, 0.3]), NoiseModel(), 300, seed=8)
    res = fit_cls(w, ARCH1)
    d = json.loads(res.to_json())
    assert d["schema"] == 1 and d["method"] == "cls"
    assert d["param_names"] == ["theta0", "theta1"]
    assert set(d) >= {"psi_hat", "cov", "objective", "diagnostics", "std_errors"}
    np.testing.assert_allclose(d["std_errors"], np.sqrt(np.diag(res.covariance.delta_hat) / 300))
    np.testing.assert_array_equal(estimate_delta(w, res.psi_hat, ARCH1).delta_hat, res.covariance.delta_hat)
