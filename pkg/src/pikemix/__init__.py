"""Adaptive multitask data mixing (PiKE and variants) on synthetic task families."""

from .core import (
    BatchPlan,
    ConflictProfile,
    InputError,
    NotAvailableError,
    SimplexWeights,
    TaskGradStats,
    TrainRecord,
    validate_simplex,
)

__version__ = "0.1.0"

__all__ = [
    "BatchPlan",
    "ConflictProfile",
    "InputError",
    "NotAvailableError",
    "SimplexWeights",
    "TaskGradStats",
    "TrainRecord",
    "validate_simplex",
]
