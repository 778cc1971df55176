import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from nlhet import kde
from nlhet import model as M
from nlhet.errors import InvalidArgument
from nlhet.noise import NoiseModel

from conftest import ARCH1, EXPAR_ARCH, ZeroNoise


def test_residuals_recover_generating_draws():
    psi = M.ParamVector([0.6], [0.4, 0.05])
    s = M.simulate_series(EXPAR_ARCH, psi, NoiseModel(), 200, burn_in=50, seed=4)
    eps = NoiseModel().sample(np.random.default_rng(4), 50 + 1 + 200)[51:]
    np.testing.assert_allclose(kde.residuals(s, psi, EXPAR_ARCH), eps, rtol=1e-12, atol=1e-12)


def test_residuals_hand_division():
    spec = M.ModelSpec("zero", "constant")
    r = kde.residuals(M.SeriesWindow([], [2.0, -4.0]), M.ParamVector([], [4.0]), spec)
    np.testing.assert_array_equal(r, [1.0, -2.0])


def test_residuals_vanish_without_noise():
    psi = M.ParamVector([0.6], [0.4, 0.05])
    s = M.simulate_series(EXPAR_ARCH, psi, ZeroNoise(), 30, burn_in=0, initial=1.0)
    np.testing.assert_allclose(kde.residuals(s, psi, EXPAR_ARCH), 0.0, atol=1e-15)


def test_bandwidth_constant_and_rate():
    c = kde.bandwidth_constant(1.0, 1.349)
    assert c == pytest.approx(0.9 / 1.34, rel=1e-15)
    assert c * 512**kde.RATE == pytest.approx(0.33582, abs=1e-4)
    assert kde.bandwidth_constant(1.0, 1.349, "classical") == pytest.approx(0.9 * 1.0, rel=1e-12)


def test_bandwidth_uses_sd_and_iqr():
    v = np.random.default_rng(0).normal(size=512)
    q1, q3 = np.percentile(v, [25, 75])
    expected = 0.9 * min(np.std(v, ddof=1), q3 - q1) / 1.34 * 512 ** (-1 / 9)
    assert kde.bandwidth(v) == pytest.approx(expected, rel=1e-14)


@given(s=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
def test_bandwidth_scale_equivariant(s, seed):
    v = np.random.default_rng(seed).normal(size=100)
    assert kde.bandwidth(s * v) == pytest.approx(s * kde.bandwidth(v), rel=1e-12)


def test_rate_halving():
    assert (2 * 300) ** kde.RATE / 300**kde.RATE == pytest.approx(2 ** (-1 / 9), rel=1e-15)


def test_rate_satisfies_consistency_conditions():
    # h = n^a: each condition is a sign condition on an exponent of n
    a = Fraction(-1, 9)
    assert float(a) == kde.RATE
    assert Fraction(1, 2) + 2 * a > 0  # n^(1/2) h^2 -> inf
    assert -1 - a < 0  # (n h)^-1 log n -> 0
    for p in (1, 2):
        assert Fraction(1, 2) + (p + 2) * a > 0  # n^(1/2) h^(p+2) -> inf
        assert -1 - (2 * p + 1) * a < 0  # n^-1 h^(-2p-1) log(1/h) -> 0


def test_bandwidth_rejects_degenerate_input():
    with pytest.raises(InvalidArgument):
        kde.bandwidth(np.zeros(50))
    with pytest.raises(InvalidArgument):
        kde.bandwidth([1.0, 2.0])
    with pytest.raises(InvalidArgument):
        kde.bandwidth_constant(1, 1, "other")


def test_single_point_kernel_value():
    assert kde.density_estimate([0.0], 1.0, 0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)


@given(a=st.floats(0.01, 5))
def test_symmetric_sample_derivative_vanishes_at_zero(a):
    assert kde.density_estimate([-a, a], 0.7, 1, 0.0) == pytest.approx(0.0, abs=1e-17)


def test_tails_vanish():
    assert kde.density_estimate([0.0, 1.0], 0.5, 0, np.array([-1e3, 1e3])).max() == 0.0


def test_kernel_derivatives():
    u = np.linspace(-4, 4, 41)
    h = 1e-5
    for p in (1, 2, 3):
        fd = (kde.kernel(u + h, p - 1) - kde.kernel(u - h, p - 1)) / (2 * h)
        np.testing.assert_allclose(kde.kernel(u, p), fd, atol=1e-9)
    with pytest.raises(InvalidArgument):
        kde.kernel(u, 4)


def test_large_sample_uniform_consistency():
    e = np.random.default_rng(1).normal(size=100_000)
    grid = (-4.0, 4.0, 401)
    c0 = kde.density_curve(e, 0, grid, noise=NoiseModel())
    c1 = kde.density_curve(e, 1, grid, noise=NoiseModel())
    assert c0.sup_distance() < 0.02
    assert c1.sup_distance() < 0.06


def test_derivative_curve_matches_numerical_derivative():
    e = np.random.default_rng(2).normal(size=500)
    grid = (-3.0, 3.0, 601)
    c0 = kde.density_curve(e, 0, grid)
    c1 = kde.density_curve(e, 1, grid, h=c0.bandwidth)
    step = c0.grid[1] - c0.grid[0]
    fd = np.gradient(c0.values, step)
    c2 = kde.density_curve(e, 2, grid, h=c0.bandwidth)
    # central differences err by step^2 f'''/6; bound it by the p = 2 curve's scale
    bound = step**2 * np.max(np.abs(c2.values)) / c0.bandwidth
    np.testing.assert_allclose(c1.values[1:-1], fd[1:-1], atol=bound)


@given(seed=st.integers(0, 10_000), n=st.integers(5, 300))
def test_density_is_nonnegative_and_integrates_to_one(seed, n):
    e = np.random.default_rng(seed).standard_t(5, size=n)
    sd = np.std(e)
    c = kde.density_curve(e, 0, (np.mean(e) - 8 * sd - 3, np.mean(e) + 8 * sd + 3, 4001))
    assert np.all(c.values >= 0) and np.all(np.isfinite(c.values))
    assert np.all(np.diff(c.grid) > 0)
    assert 0.99 <= integrate.trapezoid(c.values, c.grid) <= 1.01


def test_default_grid():
    e = np.random.default_rng(3).normal(size=200)
    c = kde.density_curve(e)
    assert c.grid.size == 401
    assert c.grid[0] == pytest.approx(np.mean(e) - 4.5 * np.std(e))
    assert c.truth is None


def test_bandwidth_from_other_values():
    e = np.random.default_rng(3).normal(size=200)
    x = 3 * e
    c = kde.density_curve(e, 0, bandwidth_from=x)
    assert c.bandwidth == pytest.approx(kde.bandwidth(x))


def test_order_validation():
    e = np.random.default_rng(0).normal(size=20)
    with pytest.raises(InvalidArgument):
        kde.density_curve(e, 3)
    with pytest.raises(InvalidArgument):
        kde.density_estimate(e, 0.0, 0, 0.0)


def test_csv_layout(tmp_path):
    e = np.random.default_rng(0).normal(size=50)
    c = kde.density_curve(e, 1, (-2.0, 2.0, 5), noise=NoiseModel())
    path = tmp_path / "c.csv"
    c.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# order=1 bandwidth=")
    assert lines[1] == "x,estimate,truth"
    assert len(lines) == 7
    assert float(lines[2].split(",")[2]) == pytest.approx(-(-2.0) * stats.norm.pdf(-2.0))


def test_arch_residual_density():
    s = M.simulate_series(ARCH1, M.ParamVector([], [0.4, 0.1]), NoiseModel(), 2000, seed=0)
    r = kde.residuals(s, M.ParamVector([], [0.4, 0.1]), ARCH1)
    c = kde.density_curve(r, 0, (-4.0, 4.0, 201), noise=NoiseModel())
    assert c.sup_distance(-4, 4) < 0.05
