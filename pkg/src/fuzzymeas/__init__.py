"""Continuous fuzzy energy measurement of a driven two-level system."""

from .core import AmplitudePair, NumericalError, ReadoutCurve, SystemConfig, derive_scales
from .micro import ElementaryModel, micro_ensemble, micro_trajectory
from .readout import PriorSpec, run_ensemble
from .rpi import integrate_rpi, probability_density

__all__ = [
    "AmplitudePair",
    "ElementaryModel",
    "NumericalError",
    "PriorSpec",
    "ReadoutCurve",
    "SystemConfig",
    "derive_scales",
    "integrate_rpi",
    "micro_ensemble",
    "micro_trajectory",
    "probability_density",
    "run_ensemble",
]
