"""Shared value types for adaptive data mixing.

Everything here is an immutable value: arrays are copied on construction
and marked read-only so records can be handed around freely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9


class InputError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class NotAvailableError(NotImplementedError):
    """Raised when a closed form is requested for a task that has none."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def validate_simplex(w) -> bool:
    """True iff ``w`` is a nonempty, nonnegative vector summing to one (1e-9)."""
    try:
        arr = np.asarray(w, dtype=float)
    except (TypeError, ValueError):
        return False
    if arr.ndim != 1 or arr.size < 1:
        return False
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        return False
    return abs(arr.sum() - 1.0) <= SIMPLEX_TOL


class SimplexWeights:
    """Sampling proportions over K tasks."""

    __slots__ = ("_w",)

    def __init__(self, w):
        if isinstance(w, SimplexWeights):
            w = w.w
        if not validate_simplex(w):
            raise InputError(f"not a point on the simplex: {np.asarray(w)!r}")
        self._w = _frozen(w)

    @classmethod
    def uniform(cls, k: int) -> "SimplexWeights":
        if k < 1:
            raise InputError("need at least one task")
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def normalized(cls, w) -> "SimplexWeights":
        arr = np.asarray(w, dtype=float)
        return cls(arr / arr.sum())

    @property
    def w(self) -> np.ndarray:
        return self._w

    def __array__(self, dtype=None, copy=None):
        return np.array(self._w, dtype=dtype)

    def __len__(self):
        return self._w.size

    def __iter__(self):
        return iter(self._w.tolist())

    def __getitem__(self, i):
        return self._w[i]

    def __eq__(self, other):
        if not isinstance(other, SimplexWeights):
            return NotImplemented
        return np.array_equal(self._w, other._w)

    def __hash__(self):
        return hash(self._w.tobytes())

    def __repr__(self):
        return f"SimplexWeights({self._w.tolist()})"


@dataclass(frozen=True)
class BatchPlan:
    """Integer sample counts per task; ``total`` is the batch size b."""

    counts: tuple
    total: int

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if self.total < 1:
            raise InputError("batch total must be >= 1")
        if any(c < 0 for c in counts):
            raise InputError(f"negative count in plan {counts}")
        if sum(counts) != self.total:
            raise InputError(f"counts {counts} do not sum to {self.total}")

    @classmethod
    def from_counts(cls, counts) -> "BatchPlan":
        counts = [int(c) for c in counts]
        return cls(tuple(counts), sum(counts))

    @property
    def k(self) -> int:
        return len(self.counts)

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class TaskGradStats:
    """Per-task gradient statistics, either estimated or exact.

    ``n_samples`` is None for exact (closed-form) statistics.
    ``grad_norm_sq_unclamped`` keeps the estimator value before clamping at 0.
    """

    loss: float
    grad_norm_sq: float
    var: float
    n_samples: Optional[int]
    mean_grad: np.ndarray
    grad_norm_sq_unclamped: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "mean_grad", _frozen(self.mean_grad))
        if self.grad_norm_sq < 0 or self.var < 0:
            raise InputError("gradient statistics must be nonnegative")
        if self.n_samples is not None and self.n_samples < 2:
            raise InputError("variance estimates need n_samples >= 2")
        if np.isnan(self.grad_norm_sq_unclamped):
            object.__setattr__(self, "grad_norm_sq_unclamped", float(self.grad_norm_sq))


def stack_stats(stats: Sequence[TaskGradStats]):
    """Return (grad_norm_sq, var, loss) arrays over tasks."""
    g = np.array([s.grad_norm_sq for s in stats], dtype=float)
    v = np.array([s.var for s in stats], dtype=float)
    loss = np.array([s.loss for s in stats], dtype=float)
    return g, v, loss


@dataclass(frozen=True, eq=False)
class ConflictProfile:
    cosine: np.ndarray
    ratio: np.ndarray
    c_under: float
    c_over: float
    beta: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "cosine", _frozen(self.cosine))
        object.__setattr__(self, "ratio", _frozen(self.ratio))


@dataclass(frozen=True, eq=False)
class TrainRecord:
    """One logged training step (state *before* the parameter update)."""

    step: int
    weights: SimplexWeights
    plan: BatchPlan
    per_task_loss: np.ndarray
    stats: tuple
    conflict: Optional[ConflictProfile]
    total_loss: float
    tilted_loss: Optional[float] = None
    updated: bool = False
    per_task_grad_norm_sq: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.step < 0:
            raise InputError("step must be >= 0")
        object.__setattr__(self, "per_task_loss", _frozen(self.per_task_loss))
        if self.per_task_grad_norm_sq is not None:
            object.__setattr__(
                self, "per_task_grad_norm_sq", _frozen(self.per_task_grad_norm_sq)
            )
        if self.theta is not None:
            object.__setattr__(self, "theta", _frozen(self.theta))
