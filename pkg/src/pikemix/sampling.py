"""Turning mixture weights into per-task sample counts."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .core import BatchPlan, InputError, SimplexWeights
from .tasks import STREAM_STRATEGY, task_rng


class Strategy(str, Enum):
    MIX = "mix"
    RANDOM = "random"
    ROUND_ROBIN = "round_robin"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class StrategyConfig:
    kind: Strategy
    static_weights: Optional[SimplexWeights] = None
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy(self.kind))
        if self.kind is Strategy.MIX:
            if self.static_weights is None:
                raise InputError("mix strategy needs static_weights")
            object.__setattr__(self, "static_weights", SimplexWeights(self.static_weights))


def round_plan(w, b: int) -> BatchPlan:
    """Largest-remainder rounding of ``b * w``; ties go to the lower task index."""
    if b < 1:
        raise InputError("batch size must be >= 1")
    w = np.asarray(w, dtype=float)
    target = b * w
    counts = np.floor(target).astype(np.int64)
    # guard against sum(w) drifting a hair above 1
    while counts.sum() > b:
        counts[np.argmax(counts - target)] -= 1
    frac = target - counts
    extra = b - int(counts.sum())
    if extra > 0:
        order = np.argsort(-frac, kind="stable")
        counts[order[:extra]] += 1
    return BatchPlan(tuple(int(c) for c in counts), b)


def strategy_plan(cfg: StrategyConfig, step: int, k: int, b: int,
                  rng: Optional[np.random.Generator] = None) -> BatchPlan:
    if k < 1:
        raise InputError("need at least one task")
    counts = [0] * k
    if cfg.kind is Strategy.RANDOM:
        if rng is None:
            rng = task_rng(cfg.rng_seed, 0, step, STREAM_STRATEGY)
        counts[int(rng.integers(k))] = b
        return BatchPlan(tuple(counts), b)
    if cfg.kind is Strategy.ROUND_ROBIN:
        counts[step % k] = b
        return BatchPlan(tuple(counts), b)
    if cfg.kind is Strategy.MIX:
        if len(cfg.static_weights) != k:
            raise InputError(f"static weights have {len(cfg.static_weights)} entries, expected {k}")
        return round_plan(cfg.static_weights, b)
    raise InputError("adaptive plans come from the PiKE trainers, not strategy_plan")


def floor_plan_for_estimation(plan: BatchPlan, min_per_task: int = 8) -> BatchPlan:
    if min_per_task < 2:
        raise InputError("min_per_task must be >= 2")
    return BatchPlan.from_counts(max(c, min_per_task) for c in plan.counts)
