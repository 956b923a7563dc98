"""Property suites run by ``pikemix verify``.

Each suite returns a list of :class:`PropertyResult`.  Oracles here are
deliberately brute force (grid search, literal per-sample Monte-Carlo) so a
passing suite says something independent of the closed forms it checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .core import BatchPlan, SimplexWeights
from .experiment import Example1Config, example1_analytic, example1_monte_carlo
from .mixer import (
    KktCoefficients,
    PikeConfig,
    TiltConfig,
    duality_gap,
    solve_simplex_qp,
    tilt_weights,
)
from .optim import OptimizerConfig
from .sampling import StrategyConfig
from .stats import conflict_profile, correlation_bounds, stats_from_samples
from .tasks import (
    AxisQuadratic,
    batch_mean_gradients,
    exact_grad,
    random_quadratic,
    sample_batch,
    total_loss,
    total_smoothness,
)
from .trainer import (
    descent_bound_rhs,
    hitting_time,
    pike_budget,
    run_balanced_pike,
    run_baseline,
    run_conceptual_pike,
    run_pike,
)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


# --- oracles ----------------------------------------------------------------------


def simplex_lattice(k: int, n: int) -> np.ndarray:
    """All points of the simplex with coordinates in {0, 1/n, ..., 1}."""
    if k == 1:
        return np.ones((1, 1))
    if k == 2:
        a = np.arange(n + 1) / n
        return np.stack([a, 1 - a], axis=1)
    if k == 3:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = i + j <= n
        i, j = i[keep], j[keep]
        return np.stack([i, j, n - i - j], axis=1) / n
    raise ValueError("lattice oracle only for K <= 3")


def random_plan(rng, k: int, b: int) -> BatchPlan:
    """Plan with every task drawing at least one sample."""
    extra = rng.multinomial(b - k, np.full(k, 1.0 / k))
    return BatchPlan.from_counts(extra + 1)


def mc_next_loss(tasks, theta, plan: BatchPlan, eta: float, reps: int, rng):
    """Mean and standard error of total loss after one mix-batch SGD step."""
    g = np.zeros((reps, theta.size))
    for task, c in zip(tasks, plan.counts):
        if c:
            g += c * batch_mean_gradients(task, theta, c, reps, rng)
    theta_next = theta - eta * g / plan.total
    loss = sum(t._mean_loss(theta_next) for t in tasks)
    return float(loss.mean()), float(loss.std(ddof=1) / math.sqrt(reps))


# --- suites -----------------------------------------------------------------------


def suite_kkt(n_instances: int = 100, resolution: int = 1000, seed: int = 0) -> List[PropertyResult]:
    rng = np.random.default_rng([seed, 1])
    worst = -np.inf
    for _ in range(n_instances):
        k = int(rng.integers(2, 4))
        co = KktCoefficients(rng.uniform(-5, 5, k), rng.uniform(1e-3, 5, k))
        w = solve_simplex_qp(co)
        grid_best = float(np.min(co.objective(simplex_lattice(k, resolution))))
        worst = max(worst, float(co.objective(w.w)) - grid_best)
    return [PropertyResult("kkt_vs_grid", worst <= 1e-6,
                           f"max(solver - grid) = {worst:.3e} over {n_instances} instances")]


def descent_configs(n: int, seed: int):
    """Random quadratic multi-task configurations with beta > 0 and every b_k >= 1."""
    rng = np.random.default_rng([seed, 2])
    out = []
    while len(out) < n:
        k = int(rng.integers(2, 4))
        d = int(rng.integers(2, 6))
        tasks = [random_quadratic(d, 1.0, float(rng.uniform(0.1, 2.0)), rng) for _ in range(k)]
        theta = rng.normal(size=d)
        plan = random_plan(rng, k, int(rng.integers(k, 17)))
        grads = np.stack([exact_grad(t, theta) for t in tasks])
        prof = conflict_profile(grads, plan)
        if not prof.beta > 0:
            continue
        L = total_smoothness(tasks)
        eta = float(rng.uniform(0.05, 1.0)) / L
        out.append((tasks, theta, plan, eta, L, prof))
    return out


def suite_descent(n_configs: int = 200, reps: int = 100_000, seed: int = 0,
                  required: float = 0.99) -> List[PropertyResult]:
    rng = np.random.default_rng([seed, 3])
    ok = 0
    for tasks, theta, plan, eta, L, prof in descent_configs(n_configs, seed):
        gn = [float(g @ g) for g in (exact_grad(t, theta) for t in tasks)]
        rhs = descent_bound_rhs(total_loss(tasks, theta), gn, [t.sigma_sq for t in tasks],
                                plan.counts, eta, L, prof.beta, prof.gamma)
        mean, se = mc_next_loss(tasks, theta, plan, eta, reps, rng)
        ok += mean <= rhs + 3 * se
    frac = ok / n_configs
    return [PropertyResult("descent_bound", frac >= required,
                           f"{ok}/{n_configs} configs with MC <= RHS + 3 SE ({frac:.1%})")]


def tightness_draws(n: int, k: int, d: int, seed: int):
    rng = np.random.default_rng([seed, 4, k, d])
    out = []
    for _ in range(n):
        L = float(rng.uniform(0.5, 2.0))
        tasks = [AxisQuadratic(i, L, float(rng.uniform(0.5, 4.0)), d) for i in range(k)]
        theta = rng.normal(size=d)
        plan = random_plan(rng, k, int(rng.integers(k, 17)))
        eta = float(rng.uniform(0.1, 1.0)) / L
        out.append((tasks, theta, plan, eta, L))
    return out


def tightness_zscores(n: int = 20, k: int = 3, d: int = 10, reps: int = 100_000,
                      seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([seed, 5])
    z = []
    for tasks, theta, plan, eta, L in tightness_draws(n, k, d, seed):
        gn = [float(g @ g) for g in (exact_grad(t, theta) for t in tasks)]
        # orthogonal task gradients: c_under = c_over = 0, beta = gamma = 1
        rhs = descent_bound_rhs(total_loss(tasks, theta), gn, [t.sigma_sq for t in tasks],
                                plan.counts, eta, L, 1.0, 1.0)
        mean, se = mc_next_loss(tasks, theta, plan, eta, reps, rng)
        z.append((mean - rhs) / se)
    return np.array(z)


def suite_tightness(n: int = 20, reps: int = 100_000, seed: int = 0) -> List[PropertyResult]:
    res = []
    for k, d in ((3, 10), (3, 3)):
        z = tightness_zscores(n, k, d, reps, seed)
        res.append(PropertyResult(f"tightness_K{k}_d{d}", bool(np.all(np.abs(z) <= 3)),
                                  f"|MC - RHS|/SE max {np.max(np.abs(z)):.2f}, "
                                  f"mean {np.mean(z):+.2f} over {n} draws"))
    return res


def suite_example1(cfg: Example1Config = Example1Config()) -> List[PropertyResult]:
    ad, ws, static = example1_analytic(cfg)
    sched = np.vstack([ws[None, :], np.repeat(np.array(cfg.static_grid)[:, None], cfg.steps, 1)])
    mc, se = example1_monte_carlo(cfg, sched, feedback=True)
    analytic_final = np.concatenate([[ad[-1]], static[:, -1]])
    z = np.abs(mc[:-1, -1] - analytic_final) / se[:-1, -1]
    best = float(static[:, -1].min())
    return [
        PropertyResult("example1_adaptive_le_static", bool(ad[-1] <= best),
                       f"adaptive {ad[-1]:.5f} vs best static {best:.5f} at step {cfg.steps}"),
        PropertyResult("example1_mc_matches_analytic", bool(np.all(z <= 3)),
                       f"max |MC - analytic|/SE = {z.max():.2f} over 12 policies"),
        PropertyResult("example1_feedback_adaptive_le_static", bool(mc[-1, -1] + 3 * se[-1, -1] <= best),
                       f"per-trajectory adaptive MC {mc[-1, -1]:.5f} +/- {se[-1, -1]:.5f}"),
    ]


def suite_duality(n: int = 1000, seed: int = 0) -> List[PropertyResult]:
    rng = np.random.default_rng([seed, 6])
    worst_gap, worst_sum = 0.0, 0.0
    for _ in range(n):
        k = int(rng.integers(1, 8))
        losses = rng.uniform(-5, 5, k) * 10 ** rng.uniform(-2, 1)
        tau = float(10 ** rng.uniform(-2, 1.3))
        cfg = TiltConfig(tau)
        lse = np.logaddexp.reduce(tau * losses)
        worst_gap = max(worst_gap, duality_gap(losses, cfg) / max(1.0, abs(lse)))
        worst_sum = max(worst_sum, abs(tilt_weights(losses, cfg).sum() - tau))
    return [
        PropertyResult("duality_gap", worst_gap <= 1e-9, f"max relative gap {worst_gap:.2e}"),
        PropertyResult("tilt_sum", worst_sum <= 1e-12, f"max |sum y - tau| {worst_sum:.2e}"),
    ]


def suite_lemmas(n: int = 1000, seed: int = 0) -> List[PropertyResult]:
    rng = np.random.default_rng([seed, 7])
    worst_lo, worst_hi, used = -np.inf, -np.inf, 0
    for _ in range(n):
        k = int(rng.integers(2, 6))
        d = int(rng.integers(1, 8))
        shift = rng.normal(size=d) * rng.uniform(0, 3)
        g = rng.normal(size=(k, d)) + shift
        cb = correlation_bounds(g)
        scale = max(1.0, cb.sum_sq, cb.sum_norm_sq)
        if cb.lower_rhs is not None and cb.c_under < 1 / (2 * (k - 1)):
            used += 1
            worst_lo = max(worst_lo, (cb.sum_sq - cb.lower_rhs) / scale)
        worst_hi = max(worst_hi, (cb.sum_norm_sq - cb.upper_rhs) / scale)
    return [
        PropertyResult("conflict_lower_bound", worst_lo <= 1e-9,
                       f"max relative violation {worst_lo:.2e} on {used} eligible sets"),
        PropertyResult("alignment_upper_bound", worst_hi <= 1e-9,
                       f"max relative violation {worst_hi:.2e} on {n} sets"),
    ]


def convergence_instances(n: int, seed: int):
    rng = np.random.default_rng([seed, 8])
    out = []
    for _ in range(n):
        k = int(rng.integers(2, 4))
        L = float(rng.uniform(0.5, 2.0))
        b = int(rng.integers(8, 33))
        s2 = rng.uniform(0.1, 4.0, size=k)
        tasks = [AxisQuadratic(i, L, float(s2[i]), k) for i in range(k)]
        theta0 = rng.normal(size=k)
        out.append((tasks, theta0, L, b, s2))
    return out


ASYM_SIGMA_SQ = (9.0, 0.01)
ASYM_THETA0 = (0.05, 1.0)
ASYM_BATCH = 16


def asymmetric_hitting_times(seeds, delta: float = 0.01):
    """Hitting times (PiKE, uniform Mix) at the PiKE budget stepsize on the asymmetric-noise pair."""
    tasks = [AxisQuadratic(i, 1.0, s, 2) for i, s in enumerate(ASYM_SIGMA_SQ)]
    theta0 = np.array(ASYM_THETA0)
    bud = pike_budget(delta, total_loss(tasks, theta0), 1.0, ASYM_SIGMA_SQ, ASYM_BATCH)
    uni = StrategyConfig("mix", SimplexWeights.uniform(2))
    hp, hu = [], []
    for s in seeds:
        r1 = run_conceptual_pike(tasks, theta0, ASYM_BATCH, bud.eta, 1.0, 1.0, 1.0, bud.T_bar_uniform,
                                 s, oracle_mode=True, stop_below=delta)
        r2 = run_baseline(tasks, theta0, uni, OptimizerConfig.constant_sgd(bud.eta), bud.T_bar_uniform,
                          s, ASYM_BATCH, oracle=True, stop_below=delta)
        hp.append(hitting_time(r1, delta))
        hu.append(hitting_time(r2, delta))
    return hp, hu


def suite_convergence(n: int = 20, delta: float = 0.01, seed: int = 0) -> List[PropertyResult]:
    misses = []
    worst = 0.0
    for i, (tasks, theta0, L, b, s2) in enumerate(convergence_instances(n, seed)):
        bud = pike_budget(delta, total_loss(tasks, theta0), L, s2, b)
        recs = run_conceptual_pike(tasks, theta0, b, bud.eta, 1.0, 1.0, L, bud.T_bar + 1, seed + i,
                                   oracle_mode=True, stop_below=delta)
        hit = hitting_time(recs, delta)
        if hit is None:
            misses.append(i)
        else:
            worst = max(worst, hit / bud.T_bar)
    hp, hu = asymmetric_hitting_times([seed])
    return [
        PropertyResult("convergence_within_budget", not misses,
                       f"{n - len(misses)}/{n} instances hit delta; max hit/T_bar = {worst:.3f}"),
        PropertyResult("asymmetric_pike_le_uniform",
                       hp[0] is not None and hu[0] is not None and hp[0] <= hu[0],
                       f"hitting time PiKE {hp[0]} vs uniform {hu[0]}"),
    ]


BALANCE_TAUS = (None, 1.0, 3.0, 5.0)


def balance_gaps(seeds, steps: int = 200):
    """Median final |L_1 - L_2| for plain PiKE and Balanced-PiKE at each tau."""
    tasks = [AxisQuadratic(0, 1.0, 0.1, 2), AxisQuadratic(1, 0.1, 0.1, 2)]
    theta0 = np.array([1.0, 3.0])
    opt = OptimizerConfig.constant_sgd(0.1)
    cfg = PikeConfig(zeta1=5.0, zeta2=0.1, T0=10, b=16)
    med = []
    for tau in BALANCE_TAUS:
        gaps = []
        for s in seeds:
            if tau is None:
                r = run_pike(tasks, theta0, cfg, opt, steps, s)
            else:
                r = run_balanced_pike(tasks, theta0, cfg, TiltConfig(tau), opt, steps, s)
            gaps.append(abs(r[-1].per_task_loss[0] - r[-1].per_task_loss[1]))
        med.append(float(np.median(gaps)))
    return med


def suite_balance(n_seeds: int = 10, seed: int = 0) -> List[PropertyResult]:
    med = balance_gaps(range(seed, seed + n_seeds))
    mono = all(a >= b for a, b in zip(med, med[1:]))
    return [PropertyResult("balanced_gap_nonincreasing", mono,
                           "median |L1-L2| plain,1,3,5: " + ", ".join(f"{m:.4f}" for m in med))]


def suite_estimator(reps: int = 10_000, n_small: int = 16, n_large: int = 100_000,
                    seed: int = 0) -> List[PropertyResult]:
    task = AxisQuadratic(1, 1.5, 2.0, 4)
    theta = np.array([0.3, -0.4, 1.0, 0.2])
    true_gn = float(exact_grad(task, theta) @ exact_grad(task, theta))
    rng = np.random.default_rng([seed, 9])
    est = np.array([stats_from_samples(*sample_batch(task, theta, n_small, rng)).grad_norm_sq_unclamped
                    for _ in range(reps)])
    z = (est.mean() - true_gn) / (est.std(ddof=1) / math.sqrt(reps))
    big = stats_from_samples(*sample_batch(task, theta, n_large, rng))
    rel = abs(big.var - task.sigma_sq) / task.sigma_sq
    return [
        PropertyResult("estimator_unbiased", abs(z) <= 3, f"(mean - truth)/SE = {z:+.2f} at n={n_small}"),
        PropertyResult("variance_estimate", rel <= 0.05, f"relative error {rel:.2%} at n={n_large}"),
    ]


SUITES: Dict[str, Callable[[], List[PropertyResult]]] = {
    "kkt": suite_kkt,
    "descent": suite_descent,
    "tightness": suite_tightness,
    "example1": suite_example1,
    "duality": suite_duality,
    "lemmas": suite_lemmas,
    "convergence": suite_convergence,
    "balance": suite_balance,
    "estimator": suite_estimator,
}


def run_suite(name: str) -> List[PropertyResult]:
    if name == "all":
        out: List[PropertyResult] = []
        for fn in SUITES.values():
            out.extend(fn())
        return out
    return SUITES[name]()
