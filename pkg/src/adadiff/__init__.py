"""Adaptive adversarial-diffusion priors for accelerated MRI reconstruction.

Desk-scale pipeline: synthetic multi-contrast phantoms, a few-step
adversarial diffusion prior, and two-phase reconstruction (rapid
diffusion with data-consistency projections, then per-subject prior
adaptation).
"""

from .errors import (
    AdaDiffError,
    ConfigurationError,
    ContractError,
    DataError,
    DivergenceError,
    EvaluationError,
)
from .schedule import DiffusionSchedule, make_schedule, sample_posterior

__all__ = [
    "AdaDiffError",
    "ConfigurationError",
    "ContractError",
    "DataError",
    "DivergenceError",
    "EvaluationError",
    "DiffusionSchedule",
    "make_schedule",
    "sample_posterior",
    "operator",
    "phantom",
    "metrics",
    "mapper",
    "recon",
    "expconfig",
    "cli",
]

__version__ = "0.1.0"
