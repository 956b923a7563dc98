"""Synthetic task families with closed-form losses, gradients and noise.

Two families are provided:

* :class:`AxisQuadratic`, per-sample loss ``(L/2) * theta[axis]**2 + x @ theta``
  with ``x ~ N(0, sigma_sq/dim * I)``.  Distinct axes give exactly orthogonal
  task gradients.
* :class:`RandomQuadratic`, per-sample loss
  ``0.5 * (theta - a) @ H @ (theta - a) + x @ theta`` with the same noise model,
  used where nonzero conflict/alignment is wanted.

Randomness is always passed in explicitly; :func:`task_rng` derives
independent counter-based streams from ``(seed, task_index, step, stream)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import InputError, NotAvailableError

# stream ids keep estimation, training and strategy draws apart
STREAM_TRAIN = 0
STREAM_ESTIMATE = 1
STREAM_STRATEGY = 2
STREAM_AUX = 3

_CHUNK_FLOATS = 4_000_000


def task_rng(seed: int, task_index: int, step: int, stream: int = STREAM_TRAIN) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed), int(task_index), int(step), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class AxisQuadratic:
    axis_index: int
    smoothness: float
    sigma_sq: float
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise InputError("dim must be >= 1")
        if not 0 <= self.axis_index < self.dim:
            raise InputError(f"axis_index {self.axis_index} outside [0, {self.dim})")
        if self.smoothness <= 0:
            raise InputError("smoothness must be > 0")
        if self.sigma_sq < 0:
            raise InputError("sigma_sq must be >= 0")

    def _mean_grad(self, theta: np.ndarray) -> np.ndarray:
        g = np.zeros_like(theta, dtype=float)
        g[..., self.axis_index] = self.smoothness * theta[..., self.axis_index]
        return g

    def _mean_loss(self, theta: np.ndarray) -> np.ndarray:
        return 0.5 * self.smoothness * theta[..., self.axis_index] ** 2


@dataclass(frozen=True, eq=False)
class RandomQuadratic:
    hessian: np.ndarray
    center: np.ndarray
    sigma_sq: float
    smoothness: float

    def __post_init__(self):
        h = np.array(self.hessian, dtype=float)
        a = np.array(self.center, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1] or a.shape != (h.shape[0],):
            raise InputError("hessian must be d x d and center length d")
        if not np.allclose(h, h.T, atol=1e-12):
            raise InputError("hessian must be symmetric")
        eig = np.linalg.eigvalsh(h)
        if eig[0] < -1e-10:
            raise InputError("hessian must be positive semidefinite")
        if eig[-1] > self.smoothness * (1 + 1e-10):
            raise InputError("hessian spectral norm exceeds declared smoothness")
        if self.sigma_sq < 0:
            raise InputError("sigma_sq must be >= 0")
        h.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "center", a)

    @property
    def dim(self) -> int:
        return self.center.size

    def _mean_grad(self, theta: np.ndarray) -> np.ndarray:
        return (theta - self.center) @ self.hessian

    def _mean_loss(self, theta: np.ndarray) -> np.ndarray:
        r = theta - self.center
        return 0.5 * np.einsum("...i,ij,...j->...", r, self.hessian, r)


Task = Union[AxisQuadratic, RandomQuadratic]


def random_quadratic(dim: int, smoothness: float, sigma_sq: float, rng: np.random.Generator,
                     center_scale: float = 1.0) -> RandomQuadratic:
    """Draw H = Q diag(lam) Q^T with lam ~ U[0, L] and a ~ N(0, center_scale^2 I)."""
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    lam = rng.uniform(0.0, smoothness, size=dim)
    h = (q * lam) @ q.T
    h = 0.5 * (h + h.T)
    center = center_scale * rng.normal(size=dim)
    return RandomQuadratic(h, center, sigma_sq, smoothness)


def _check_theta(task: Task, theta) -> np.ndarray:
    if not isinstance(task, (AxisQuadratic, RandomQuadratic)):
        raise NotAvailableError(f"no closed form for {type(task).__name__}")
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != task.dim:
        raise InputError(f"theta has dim {theta.shape[-1]}, task expects {task.dim}")
    return theta


def sample_batch(task: Task, theta, count: int, rng: np.random.Generator):
    """Draw ``count`` i.i.d. samples; return (per-sample grads (count, d), losses (count,))."""
    theta = _check_theta(task, theta)
    if theta.ndim != 1:
        raise InputError("theta must be a flat vector")
    if count < 1:
        raise InputError("count must be >= 1")
    d = task.dim
    x = rng.normal(scale=np.sqrt(task.sigma_sq / d), size=(count, d))
    grads = task._mean_grad(theta) + x
    losses = task._mean_loss(theta) + x @ theta
    return grads, losses


def batch_mean_gradients(task: Task, theta, count: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """Average of ``count`` per-sample gradients, repeated ``reps`` times -> (reps, d).

    Samples are drawn individually (not from the closed-form law of the mean)
    so Monte-Carlo checks built on this stay independent of the analysis.
    """
    theta = _check_theta(task, theta)
    d = task.dim
    if count == 0:
        return np.zeros((reps, d))
    scale = np.sqrt(task.sigma_sq / d)
    out = np.empty((reps, d))
    per_rep = count * d
    chunk = max(1, _CHUNK_FLOATS // per_rep)
    for start in range(0, reps, chunk):
        n = min(chunk, reps - start)
        x = rng.normal(scale=scale, size=(n, count, d))
        out[start:start + n] = x.mean(axis=1)
    return out + task._mean_grad(theta)


def exact_expected_loss(task: Task, theta):
    theta = _check_theta(task, theta)
    val = task._mean_loss(theta)
    return float(val) if np.ndim(val) == 0 else val


def exact_grad(task: Task, theta) -> np.ndarray:
    theta = _check_theta(task, theta)
    return task._mean_grad(theta)


def exact_sigma_sq(task: Task) -> float:
    if not isinstance(task, (AxisQuadratic, RandomQuadratic)):
        raise NotAvailableError(f"no closed form for {type(task).__name__}")
    # E||x||^2 = d * sigma_sq / d
    return float(task.sigma_sq)


def total_smoothness(tasks) -> float:
    """Smoothness constant of the summed objective (largest Hessian eigenvalue)."""
    d = tasks[0].dim
    h = np.zeros((d, d))
    for t in tasks:
        if isinstance(t, AxisQuadratic):
            h[t.axis_index, t.axis_index] += t.smoothness
        elif isinstance(t, RandomQuadratic):
            h += t.hessian
        else:
            raise NotAvailableError(f"no closed form for {type(t).__name__}")
    return float(np.linalg.eigvalsh(h)[-1])


def total_loss(tasks, theta):
    return sum(exact_expected_loss(t, theta) for t in tasks)
