"""
Unit-variance noise families.

``phi = -f'/f`` is the score driving the likelihood equations. Gaussian and
standardised Student-t noise support the likelihood machinery; Laplace noise
is sampling-only because its score is not differentiable at zero.

The Student-t family with ``nu`` degrees of freedom is rescaled to unit
variance: ``eps = s T`` with ``T ~ t_nu`` and ``s^2 = (nu - 2) / nu``. Then

    phi(x)  = (nu + 1) x / (nu - 2 + x^2)
    phi'(x) = (nu + 1) (nu - 2 - x^2) / (nu - 2 + x^2)^2
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from nlhet.errors import InvalidArgument, UnsupportedOperation

FAMILIES = ("gaussian", "laplace", "student_t")
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class NoiseMoments:
    """Moments and score integrals entering the asymptotic covariances.

    Integrals involving ``phi`` are ``nan`` for sampling-only families.
    """

    third: float
    fourth_central: float
    int_phi_sq: float
    int_phi_prime: float
    int_x_phi_sq: float
    int_sigma22: float
    int_lambda12: float
    int_lambda22: float


@dataclass(frozen=True)
class NoiseModel:
    family: str = "gaussian"
    nu: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgument(f"unknown noise family {self.family!r}")
        if self.family == "student_t":
            if self.nu is None or not self.nu > 4:
                raise InvalidArgument("student_t noise needs nu > 4 (finite fourth moment)")
            object.__setattr__(self, "nu", float(self.nu))
        elif self.nu is not None:
            raise InvalidArgument(f"nu is only meaningful for student_t, not {self.family}")

    @property
    def cml_eligible(self) -> bool:
        return self.family != "laplace"

    def _require_score(self):
        if not self.cml_eligible:
            raise UnsupportedOperation(
                f"{self.family} is sampling-only: its score is not differentiable"
            )

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.family == "gaussian":
            return rng.standard_normal(size)
        if self.family == "laplace":
            return rng.laplace(0.0, 1.0 / _SQRT2, size)
        nu = self.nu
        return rng.standard_t(nu, size) * math.sqrt((nu - 2) / nu)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            return -0.5 * x * x - _LOG_SQRT_2PI
        if self.family == "laplace":
            return -_SQRT2 * np.abs(x) - 0.5 * math.log(2.0)
        nu = self.nu
        a = nu - 2
        const = (
            special.gammaln((nu + 1) / 2)
            - special.gammaln(nu / 2)
            - 0.5 * math.log(math.pi * a)
        )
        return const - 0.5 * (nu + 1) * np.log1p(x * x / a)

    def density(self, x, p: int = 0):
        """``f^(p)(x)`` for ``p`` in {0, 1, 2}."""
        x = np.asarray(x, dtype=float)
        f = np.exp(self.log_density(x))
        if p == 0:
            return f
        if self.family == "laplace":
            if p == 1:
                return -_SQRT2 * np.sign(x) * f
            raise UnsupportedOperation("laplace density has no second derivative at 0")
        phi = self.score_phi(x)
        if p == 1:
            return -phi * f
        if p == 2:
            return (phi * phi - self.score_phi_prime(x)) * f
        raise InvalidArgument("density derivative order must be 0, 1 or 2")

    def score_phi(self, x):
        self._require_score()
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            return x.copy() if x.ndim else float(x)
        a = self.nu - 2
        return (self.nu + 1) * x / (a + x * x)

    def score_phi_prime(self, x):
        self._require_score()
        x = np.asarray(x, dtype=float)
        if self.family == "gaussian":
            return np.ones_like(x) if x.ndim else 1.0
        a = self.nu - 2
        d = a + x * x
        return (self.nu + 1) * (a - x * x) / (d * d)

    def moments(self) -> NoiseMoments:
        return _moments(self.family, self.nu)

    def to_dict(self) -> dict:
        d: dict = {"family": self.family}
        if self.nu is not None:
            d["nu"] = self.nu
        return d

    @classmethod
    def from_dict(cls, d: dict) -> NoiseModel:
        if isinstance(d, str):
            return cls(d)
        if "family" not in d:
            raise InvalidArgument("noise spec is missing key 'family'")
        return cls(d["family"], d.get("nu"))


@lru_cache(maxsize=None)
def _moments(family: str, nu: float | None) -> NoiseMoments:
    if family == "gaussian":
        return NoiseMoments(0.0, 2.0, 1.0, 1.0, 0.0, 2.0, 0.0, 2.0)
    if family == "laplace":
        # E eps^4 = 6 at unit variance
        nan = math.nan
        return NoiseMoments(0.0, 5.0, nan, nan, nan, nan, nan, nan)
    noise = NoiseModel(family, nu)
    fourth = 3 * (nu - 2) / (nu - 4)

    def expect(g):
        val, _ = integrate.quad(lambda x: g(x) * noise.density(x), -np.inf, np.inf,
                                epsabs=1e-13, epsrel=1e-12, limit=200)
        return val

    phi = noise.score_phi
    dphi = noise.score_phi_prime
    return NoiseMoments(
        third=0.0,
        fourth_central=fourth - 1,
        int_phi_sq=expect(lambda x: phi(x) ** 2),
        int_phi_prime=expect(dphi),
        int_x_phi_sq=expect(lambda x: x * phi(x) ** 2),
        int_sigma22=expect(lambda x: x * (phi(x) + x * dphi(x))),
        int_lambda12=expect(lambda x: phi(x) * (x * phi(x) - 1)),
        int_lambda22=expect(lambda x: (x * phi(x) - 1) ** 2),
    )


def xi(noise: NoiseModel, eps):
    return noise.score_phi(eps)


def xi_dot(noise: NoiseModel, eps):
    return noise.score_phi_prime(eps)


def zeta(noise: NoiseModel, eps):
    return np.multiply(eps, noise.score_phi(eps))


def zeta_dot(noise: NoiseModel, eps):
    return np.multiply(eps, noise.score_phi_prime(eps))


def zeta_ddot(noise: NoiseModel, eps):
    return zeta(noise, eps) + np.multiply(eps, zeta_dot(noise, eps))
