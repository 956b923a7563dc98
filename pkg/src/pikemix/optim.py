"""SGD and AdamW with a warmup / linear-decay schedule and norm clipping."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .core import InputError

ADAM_EPS = 1e-8


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAMW = "adamw"


@dataclass(frozen=True)
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.SGD
    eta_peak: float = 7e-4
    eta_init_final: float = 7e-6
    warmup_steps: int = 10_000
    total_steps: int = 120_000
    beta1: float = 0.95
    beta2: float = 0.98
    weight_decay: float = 0.1
    clip_norm: Optional[float] = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if not self.eta_peak > 0:
            raise InputError("eta_peak must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InputError("beta1 and beta2 must lie in [0, 1)")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise InputError("clip_norm must be > 0 when given")
        if self.warmup_steps < 0 or self.total_steps < 0:
            raise InputError("step counts must be >= 0")

    @classmethod
    def constant_sgd(cls, eta: float, total_steps: int = 0) -> "OptimizerConfig":
        return cls(OptimizerKind.SGD, eta, eta, 0, total_steps, 0.0, 0.0, 0.0, None)


def lr_at(cfg: OptimizerConfig, step: int) -> float:
    """Linear warmup eta_init_final -> eta_peak, then linear decay back by total_steps."""
    lo, hi = cfg.eta_init_final, cfg.eta_peak
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return lo + (hi - lo) * step / cfg.warmup_steps
    decay_len = cfg.total_steps - cfg.warmup_steps
    if decay_len <= 0:
        return hi
    frac = min(1.0, (step - cfg.warmup_steps) / decay_len)
    return hi + (lo - hi) * frac


def clip_by_norm(grad, clip_norm: Optional[float]) -> np.ndarray:
    grad = np.asarray(grad, dtype=float)
    if clip_norm is None:
        return grad
    norm = np.linalg.norm(grad)
    if norm > clip_norm:
        return grad * (clip_norm / norm)
    return grad


def sgd_step(theta, grad, eta: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise InputError(f"theta {theta.shape} and grad {grad.shape} differ in shape")
    return theta - eta * grad


@dataclass(frozen=True, eq=False)
class AdamWState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def init(cls, theta) -> "AdamWState":
        theta = np.array(theta, dtype=float)
        return cls(theta, np.zeros_like(theta), np.zeros_like(theta), 0)


def adamw_step(state: AdamWState, grad, cfg: OptimizerConfig, step: int):
    """One decoupled-weight-decay Adam step. Returns (new_state, new_theta)."""
    grad = clip_by_norm(grad, cfg.clip_norm)
    if grad.shape != state.theta.shape:
        raise InputError("grad and theta differ in shape")
    lr = lr_at(cfg, step)
    t = state.t + 1
    m = cfg.beta1 * state.m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1 - cfg.beta2) * grad * grad
    m_hat = m / (1 - cfg.beta1 ** t)
    v_hat = v / (1 - cfg.beta2 ** t)
    theta = state.theta * (1 - lr * cfg.weight_decay)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return AdamWState(theta, m, v, t), theta


class Optimizer:
    """Stateful wrapper so trainers can treat SGD and AdamW alike."""

    def __init__(self, cfg: OptimizerConfig, theta0):
        self.cfg = cfg
        self.theta = np.array(theta0, dtype=float)
        self._adam = AdamWState.init(self.theta) if cfg.kind is OptimizerKind.ADAMW else None

    def lr(self, step: int) -> float:
        return lr_at(self.cfg, step)

    def step(self, grad, step: int) -> np.ndarray:
        if self._adam is not None:
            self._adam, self.theta = adamw_step(self._adam, grad, self.cfg, step)
        else:
            g = clip_by_norm(grad, self.cfg.clip_norm)
            self.theta = sgd_step(self.theta, g, lr_at(self.cfg, step))
        return self.theta
