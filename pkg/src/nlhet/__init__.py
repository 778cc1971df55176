"""Estimation for nonlinear heteroscedastic time series.

The model class is ``X_i = m(rho; Z_{i-1}) + sigma(theta; Z_{i-1}) eps_i`` with
known mean and volatility families, fitted by two-step conditional least
squares or conditional maximum likelihood.
"""

from nlhet.errors import (
    InvalidArgument,
    SimulationDiverged,
    SingularInformationError,
    SingularSystemError,
    UnsupportedOperation,
)
from nlhet.model import ModelSpec, ParamVector, SeriesWindow, simulate_series
from nlhet.noise import NoiseModel
from nlhet.cls import fit_cls, estimate_delta
from nlhet.cml import fit_cml, estimate_cml_covariance
from nlhet.kde import bandwidth, density_curve, density_estimate, residuals

__all__ = [
    "InvalidArgument",
    "ModelSpec",
    "NoiseModel",
    "ParamVector",
    "SeriesWindow",
    "SimulationDiverged",
    "SingularInformationError",
    "SingularSystemError",
    "UnsupportedOperation",
    "bandwidth",
    "density_curve",
    "density_estimate",
    "estimate_cml_covariance",
    "estimate_delta",
    "fit_cls",
    "fit_cml",
    "residuals",
    "simulate_series",
]

__version__ = "0.1.0"
