import numpy as np
import pytest
from hypothesis import settings

from nlhet import model as M
from nlhet.noise import NoiseModel

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


class ZeroNoise:
    """Sampler returning zeros: the recursion becomes deterministic."""

    def sample(self, rng, size):
        return np.zeros(size)


class SkewNoise:
    """Centred unit exponential: unit variance, third moment 2."""

    def sample(self, rng, size):
        return rng.standard_exponential(size) - 1.0


EXPAR_I = M.ModelSpec("expar", "constant", kappa=0.1, expar_terms=("decay",))
ARCH1 = M.ModelSpec("zero", "arch", vol_order=1)
EXPAR_ARCH = M.ModelSpec("expar", "arch", vol_order=1, kappa=0.0, expar_terms=("linear",))
AR1_CONST = M.ModelSpec("ar", "constant", mean_order=1)

# (spec, a feasible parameter) for every built-in family combination
FAMILY_CASES = [
    (EXPAR_I, M.ParamVector([-0.5], [1.0])),
    (ARCH1, M.ParamVector([], [0.4, 0.3])),
    (EXPAR_ARCH, M.ParamVector([0.6], [0.4, 0.05])),
    (AR1_CONST, M.ParamVector([0.5], [0.8])),
    (M.ModelSpec("ar", "arch", mean_order=2, vol_order=2), M.ParamVector([0.3, -0.2], [0.3, 0.2, 0.1])),
    (M.ModelSpec("expar", "arch", vol_order=1, kappa=0.5), M.ParamVector([0.3, 0.4], [0.5, 0.2])),
    (M.ModelSpec("zero", "garch", trunc_lag=30), M.ParamVector([], [0.1, 0.3, 0.2])),
]


@pytest.fixture
def gaussian():
    return NoiseModel("gaussian")


@pytest.fixture
def zero_noise():
    return ZeroNoise()


@pytest.fixture
def skew_noise():
    return SkewNoise()


# filled by test_acceptance.record and echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
