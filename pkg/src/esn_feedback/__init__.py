"""Echo state networks whose input channel carries trained linear state feedback."""

from .errors import (
    DataError,
    DegenerateTargetError,
    EsnError,
    NumericError,
    NumericOverflowError,
    ProjectionSingularError,
    UsageError,
)
from .feedback import GdConfig, GdHistory, gradient, optimize, project_step
from .readout import ReadoutSolution, fit, nmse
from .reservoir import EsnParams, Trajectory, Windows, run, sensitivities
from .sampler import SamplerSpec, sample_esn

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateTargetError",
    "EsnError",
    "EsnParams",
    "GdConfig",
    "GdHistory",
    "NumericError",
    "NumericOverflowError",
    "ProjectionSingularError",
    "ReadoutSolution",
    "SamplerSpec",
    "Trajectory",
    "UsageError",
    "Windows",
    "fit",
    "gradient",
    "nmse",
    "optimize",
    "project_step",
    "run",
    "sample_esn",
    "sensitivities",
]
