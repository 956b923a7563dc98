"""Training loops for static baselines, conceptual PiKE, PiKE and Balanced-PiKE.

All loops share one driver.  A *policy* decides, at each step, whether fresh
gradient statistics are needed and which mixture to sample from; the driver
handles estimation, batching, the optimizer and logging.

Randomness is keyed on ``(seed, task_index, step, stream)`` so training
draws, estimation draws and strategy draws never share a stream.  Two runs
that differ only in how weights are chosen therefore see the same samples
whenever they ask for the same counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core import BatchPlan, InputError, SimplexWeights, TaskGradStats, TrainRecord
from .mixer import (
    PikeConfig,
    TiltConfig,
    balanced_pike_update,
    kkt_coefficients,
    pike_update,
    solve_simplex_qp,
    tilted_loss,
)
from .optim import Optimizer, OptimizerConfig
from .sampling import Strategy, StrategyConfig, floor_plan_for_estimation, round_plan, strategy_plan
from .stats import estimate_task_stats, exact_task_stats, profile_from_stats
from .tasks import (
    STREAM_ESTIMATE,
    STREAM_STRATEGY,
    STREAM_TRAIN,
    exact_expected_loss,
    exact_grad,
    sample_batch,
    task_rng,
)

DEFAULT_MIN_PER_TASK = 8


@dataclass(frozen=True)
class ConvergenceBudget:
    delta: float
    eta: float
    T_bar: int
    T_bar_uniform: int


def pike_budget(delta: float, Delta_L: float, L: float, sigma_sq: Sequence[float], b: int,
                beta: float = 1.0, gamma: float = 1.0) -> ConvergenceBudget:
    """Stepsize and iteration budgets for conceptual PiKE and for uniform mixing.

    ``sigma_sq`` holds the per-task variances; the PiKE budget uses their max,
    the uniform budget their sum.
    """
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    if delta <= 0 or Delta_L <= 0 or L <= 0 or b < 1 or beta <= 0 or gamma <= 0:
        raise InputError("budget inputs must be positive")
    s_max = float(sigma_sq.max())
    k = sigma_sq.size
    eta = beta * delta / (L * s_max / b + L * gamma * delta)
    t_bar = 2 * L * Delta_L * (s_max / b + gamma * delta) / (delta ** 2 * beta ** 2)
    t_uni = 2 * L * Delta_L * (delta + float(sigma_sq.sum()) * k / b) / delta ** 2
    return ConvergenceBudget(delta, eta, _ceil(t_bar), _ceil(t_uni))


def _ceil(x: float) -> int:
    # 40.000000000000004 should still be 40
    return int(math.ceil(x - 1e-9 * max(1.0, abs(x))))


def descent_bound_rhs(loss_now: float, gnorm, sigma_sq, counts, eta: float, L: float,
                      beta: float, gamma: float) -> float:
    """Right-hand side of the one-step expected-descent bound for a mix batch."""
    gnorm = np.asarray(gnorm, dtype=float)
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    bk = np.asarray(counts, dtype=float)
    b = bk.sum()
    first = np.sum(bk * (-eta / b * beta * gnorm + L * eta ** 2 / (2 * b ** 2) * sigma_sq))
    second = np.sum(bk ** 2 * L * eta ** 2 / (2 * b ** 2) * gamma * gnorm)
    return float(loss_now + first + second)


# --- policies -----------------------------------------------------------------


class _StaticPolicy:
    def __init__(self, strategy: StrategyConfig, k: int, b: int, seed: int, stats_every: int):
        self.strategy, self.k, self.b, self.seed = strategy, k, b, seed
        self.stats_every = stats_every
        if strategy.kind is Strategy.MIX:
            self.weights = strategy.static_weights
        else:
            self.weights = SimplexWeights.uniform(k)

    def needs_stats(self, t):
        return t % self.stats_every == 0

    def decide(self, t, stats, losses):
        rng = task_rng(self.seed, 0, t, STREAM_STRATEGY)
        plan = strategy_plan(self.strategy, t, self.k, self.b, rng)
        if self.strategy.kind is Strategy.MIX:
            return self.weights, plan, False
        return SimplexWeights(plan.as_array() / self.b), plan, False


class _PikePolicy:
    def __init__(self, cfg: PikeConfig, init: SimplexWeights, tilt: Optional[TiltConfig] = None):
        self.cfg, self.tilt = cfg, tilt
        self.weights = init
        self.plan = round_plan(init, cfg.b)

    def needs_stats(self, t):
        return t % self.cfg.T0 == 0

    def decide(self, t, stats, losses):
        if t % self.cfg.T0 != 0:
            return self.weights, self.plan, False
        if self.tilt is None:
            self.weights = pike_update(self.weights, stats, self.cfg)
        else:
            self.weights = balanced_pike_update(self.weights, stats, losses, self.tilt, self.cfg)
        self.plan = round_plan(self.weights, self.cfg.b)
        return self.weights, self.plan, True


class _ConceptualPolicy:
    def __init__(self, k, b, eta, beta, gamma, L, init: SimplexWeights, recompute_beta: bool):
        self.b, self.eta, self.beta, self.gamma, self.L = b, eta, beta, gamma, L
        self.recompute_beta = recompute_beta
        self.weights = init
        self.plan = round_plan(init, b)

    def needs_stats(self, t):
        return True

    def decide(self, t, stats, losses):
        beta, gamma = self.beta, self.gamma
        if self.recompute_beta and len(stats) > 1:
            prof = profile_from_stats(stats, self.plan)
            beta, gamma = prof.beta, prof.gamma
        coeffs = kkt_coefficients(stats, self.eta, beta, gamma, self.L, self.b)
        self.weights = solve_simplex_qp(coeffs)
        self.plan = round_plan(self.weights, self.b)
        return self.weights, self.plan, True


# --- driver -------------------------------------------------------------------


def _task_stats(tasks, theta, plan, t, seed, oracle, min_per_task) -> List[TaskGradStats]:
    if oracle:
        return [exact_task_stats(task, theta) for task in tasks]
    counts = floor_plan_for_estimation(plan, min_per_task).counts
    return [
        estimate_task_stats(task, theta, counts[k], task_rng(seed, k, t, STREAM_ESTIMATE))
        for k, task in enumerate(tasks)
    ]


def mix_gradient(tasks, theta, plan: BatchPlan, t: int, seed: int) -> np.ndarray:
    """Average of all per-sample gradients in a mix batch."""
    g = np.zeros_like(theta)
    for k, (task, c) in enumerate(zip(tasks, plan.counts)):
        if c == 0:
            continue
        grads, _ = sample_batch(task, theta, c, task_rng(seed, k, t, STREAM_TRAIN))
        g += grads.sum(axis=0)
    return g / plan.total


def _drive(tasks, theta0, steps, policy, optimizer: Optimizer, seed, oracle, tilt,
           min_per_task, initial_plan: BatchPlan,
           stop_below: Optional[float] = None) -> List[TrainRecord]:
    if not tasks:
        raise InputError("need at least one task")
    theta = np.array(theta0, dtype=float)
    if theta.ndim != 1 or theta.size != tasks[0].dim or not np.all(np.isfinite(theta)):
        raise InputError("theta0 must be a finite vector matching the task dimension")
    records = []
    stats = None
    plan = initial_plan
    for t in range(steps):
        if policy.needs_stats(t) or stats is None:
            stats = _task_stats(tasks, theta, plan, t, seed, oracle, min_per_task)
        losses_hat = np.array([s.loss for s in stats])
        weights, plan, updated = policy.decide(t, stats, losses_hat)

        exact_losses = np.array([exact_expected_loss(task, theta) for task in tasks])
        exact_gn = np.array([float(g @ g) for g in (exact_grad(task, theta) for task in tasks)])
        records.append(TrainRecord(
            step=t,
            weights=weights,
            plan=plan,
            per_task_loss=exact_losses,
            stats=tuple(stats),
            conflict=profile_from_stats(stats, plan),
            total_loss=float(exact_losses.sum()),
            tilted_loss=tilted_loss(exact_losses, tilt) if tilt is not None else None,
            updated=updated,
            per_task_grad_norm_sq=exact_gn,
            theta=theta,
        ))
        if stop_below is not None and exact_gn.max() <= stop_below:
            break
        g = mix_gradient(tasks, theta, plan, t, seed)
        theta = optimizer.step(g, t).copy()
    return records


def run_baseline(tasks, theta0, strategy: StrategyConfig, optimizer: OptimizerConfig, steps: int,
                 seed: int, b: int, oracle: bool = False, stats_every: int = 1000,
                 tilt: Optional[TiltConfig] = None,
                 min_per_task: int = DEFAULT_MIN_PER_TASK,
                 stop_below: Optional[float] = None) -> List[TrainRecord]:
    """Static mixing (fixed weights, random, or round-robin).

    ``stop_below`` ends the run at the first step where every task's exact
    squared gradient norm is at most that value.
    """
    k = len(tasks)
    policy = _StaticPolicy(strategy, k, b, seed, stats_every)
    init_plan = round_plan(policy.weights, b)
    return _drive(tasks, theta0, steps, policy, Optimizer(optimizer, theta0), seed, oracle, tilt,
                  min_per_task, init_plan, stop_below)


def run_pike(tasks, theta0, cfg: PikeConfig, optimizer: OptimizerConfig, steps: int, seed: int,
             init_weights=None, oracle: bool = False, tilt: Optional[TiltConfig] = None,
             min_per_task: int = DEFAULT_MIN_PER_TASK) -> List[TrainRecord]:
    """Practical PiKE: multiplicative weight step every ``cfg.T0`` iterations.

    ``tilt`` here only adds the tilted loss to the log; use
    :func:`run_balanced_pike` for the balanced update.
    """
    init = SimplexWeights(init_weights) if init_weights is not None else SimplexWeights.uniform(len(tasks))
    if len(init) != len(tasks):
        raise InputError("init_weights length does not match number of tasks")
    policy = _PikePolicy(cfg, init)
    return _drive(tasks, theta0, steps, policy, Optimizer(optimizer, theta0), seed, oracle, tilt,
                  min_per_task, policy.plan)


def run_balanced_pike(tasks, theta0, cfg: PikeConfig, tilt: TiltConfig, optimizer: OptimizerConfig,
                      steps: int, seed: int, init_weights=None, oracle: bool = False,
                      min_per_task: int = DEFAULT_MIN_PER_TASK) -> List[TrainRecord]:
    init = SimplexWeights(init_weights) if init_weights is not None else SimplexWeights.uniform(len(tasks))
    policy = _PikePolicy(cfg, init, tilt)
    return _drive(tasks, theta0, steps, policy, Optimizer(optimizer, theta0), seed, oracle, tilt,
                  min_per_task, policy.plan)


def run_conceptual_pike(tasks, theta0, b: int, eta: float, beta: float, gamma: float, L: float,
                        steps: int, seed: int, oracle_mode: bool = True,
                        init_weights=None, recompute_beta: bool = False,
                        tilt: Optional[TiltConfig] = None,
                        min_per_task: int = DEFAULT_MIN_PER_TASK,
                        stop_below: Optional[float] = None) -> List[TrainRecord]:
    """Per-step exact minimisation of the descent bound, followed by an SGD step.

    ``beta``/``gamma`` are fixed inputs unless ``recompute_beta`` is set, in
    which case they are re-measured from the current statistics and the
    previous step's plan.
    """
    k = len(tasks)
    init = SimplexWeights(init_weights) if init_weights is not None else SimplexWeights.uniform(k)
    policy = _ConceptualPolicy(k, b, eta, beta, gamma, L, init, recompute_beta)
    opt = Optimizer(OptimizerConfig.constant_sgd(eta), theta0)
    return _drive(tasks, theta0, steps, policy, opt, seed, oracle_mode, tilt, min_per_task,
                  policy.plan, stop_below)


def hitting_time(records: Sequence[TrainRecord], delta: float) -> Optional[int]:
    """First logged step where every task's exact squared gradient norm is <= delta."""
    for r in records:
        if np.max(r.per_task_grad_norm_sq) <= delta:
            return r.step
    return None
