"""Gradient statistics and conflict/alignment diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import BatchPlan, ConflictProfile, InputError, TaskGradStats
from .tasks import exact_expected_loss, exact_grad, exact_sigma_sq, sample_batch


def stats_from_samples(grads, losses, correct_bias: bool = True) -> TaskGradStats:
    """Summarise per-sample gradients ``(n, d)`` and losses ``(n,)``.

    With ``correct_bias`` the squared norm of the mean is debiased by
    ``var/n`` (E||g_bar||^2 = ||grad||^2 + sigma^2/n) and then clamped at 0.
    """
    grads = np.asarray(grads, dtype=float)
    n = grads.shape[0]
    if n < 2:
        raise InputError("need at least 2 samples to estimate a variance")
    g_bar = grads.mean(axis=0)
    var = float(np.sum((grads - g_bar) ** 2) / (n - 1))
    raw = float(g_bar @ g_bar)
    est = raw - var / n if correct_bias else raw
    return TaskGradStats(
        loss=float(np.mean(losses)),
        grad_norm_sq=max(0.0, est),
        var=var,
        n_samples=n,
        mean_grad=g_bar,
        grad_norm_sq_unclamped=est,
    )


def estimate_task_stats(task, theta, n: int, rng: np.random.Generator,
                        correct_bias: bool = True) -> TaskGradStats:
    if n < 2:
        raise InputError("n must be >= 2")
    grads, losses = sample_batch(task, theta, n, rng)
    return stats_from_samples(grads, losses, correct_bias)


def exact_task_stats(task, theta) -> TaskGradStats:
    g = exact_grad(task, theta)
    return TaskGradStats(
        loss=exact_expected_loss(task, theta),
        grad_norm_sq=float(g @ g),
        var=exact_sigma_sq(task),
        n_samples=None,
        mean_grad=g,
    )


def pairwise_matrices(grads):
    """Cosine and ratio <g_j,g_k>/(|g_j|^2+|g_k|^2) matrices; zero vectors give 0."""
    g = np.asarray(grads, dtype=float)
    gram = g @ g.T
    sq = np.diag(gram).copy()
    norms = np.sqrt(sq)
    denom = np.outer(norms, norms)
    cosine = np.divide(gram, denom, out=np.zeros_like(gram), where=denom > 0)
    cosine = np.clip(cosine, -1.0, 1.0)
    cosine = 0.5 * (cosine + cosine.T)
    ssum = sq[:, None] + sq[None, :]
    ratio = np.divide(gram, ssum, out=np.zeros_like(gram), where=ssum > 0)
    ratio = 0.5 * (ratio + ratio.T)
    return cosine, ratio


def beta_constant(c_under: float, plan: BatchPlan) -> float:
    """min over tasks with b_k > 0 of 1 + c_under * (2 - K - b/b_k)."""
    counts = plan.as_array()
    active = counts > 0
    if not active.any():
        raise InputError("plan has no samples")
    k = counts.size
    return float(np.min(1.0 + c_under * (2 - k - plan.total / counts[active])))


def gamma_constant(c_over: float, k: int) -> float:
    return 1.0 + c_over * (k - 1)


def conflict_profile(mean_grads, plan: Optional[BatchPlan] = None) -> ConflictProfile:
    g = np.asarray(mean_grads, dtype=float)
    if g.ndim != 2 or g.shape[0] < 2:
        raise InputError("conflict profile needs at least two task gradients")
    k = g.shape[0]
    cosine, ratio = pairwise_matrices(g)
    off = ~np.eye(k, dtype=bool)
    c_under = float(max(0.0, np.max(-ratio[off])))
    c_over = float(max(0.0, np.max(cosine[off])))
    beta = beta_constant(c_under, plan) if plan is not None else float("nan")
    return ConflictProfile(cosine, ratio, c_under, c_over, beta, gamma_constant(c_over, k))


def profile_from_stats(stats: Sequence[TaskGradStats], plan: BatchPlan) -> Optional[ConflictProfile]:
    if len(stats) < 2:
        return None
    return conflict_profile(np.stack([s.mean_grad for s in stats]), plan)


@dataclass(frozen=True)
class CorrelationBounds:
    """Both sides of the two norm inequalities implied by measured conflict/alignment.

    ``sum_sq <= sum_norm_sq / (1 - 2*c_under*(K-1))`` (valid when
    ``c_under < 1/(2(K-1))``) and
    ``sum_norm_sq <= (1-c_over)*sum_sq + c_over*(sum sqrt(delta_k))^2``.
    """

    sum_sq: float
    sum_norm_sq: float
    lower_rhs: Optional[float]
    upper_rhs: float
    c_under: float
    c_over: float


def correlation_bounds(grads) -> CorrelationBounds:
    g = np.asarray(grads, dtype=float)
    prof = conflict_profile(g)
    k = g.shape[0]
    delta = np.sum(g * g, axis=1)
    total = g.sum(axis=0)
    sum_norm_sq = float(total @ total)
    denom = 1.0 - 2.0 * prof.c_under * (k - 1)
    lower = sum_norm_sq / denom if denom > 0 else None
    upper = (1 - prof.c_over) * delta.sum() + prof.c_over * np.sqrt(delta).sum() ** 2
    return CorrelationBounds(float(delta.sum()), sum_norm_sq, lower, float(upper),
                             prof.c_under, prof.c_over)
