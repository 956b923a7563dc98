"""Config-driven experiments: JSON config parsing, run dispatch and CSV output.

A config is one JSON object::

    {
      "seed": 0,
      "steps": 2000,
      "batch_size": 16,
      "oracle": false,
      "tasks": [{"type": "axis", "axis": 0, "dim": 2, "smoothness": 1.0, "sigma_sq": 4.0}, ...],
      "theta0": [1.0, 1.0],
      "policy": {"kind": "pike", "zeta1": 0.1, "zeta2": 0.01, "T0": 100},
      "optimizer": {"kind": "sgd", "eta_peak": 0.05, "warmup_steps": 0, ...}
    }

Policy kinds: ``mix``, ``random``, ``round_robin``, ``pike``, ``balanced``,
``conceptual``.  Errors raise :class:`ConfigError` naming the offending key.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional

import numpy as np

from .core import InputError, SimplexWeights, TrainRecord
from .mixer import DOREMI_WEIGHTS, GLAM_WEIGHTS, PikeConfig, TiltConfig, example1_optimal_w
from .optim import OptimizerConfig
from .sampling import StrategyConfig
from .tasks import AxisQuadratic, RandomQuadratic, random_quadratic, total_smoothness
from .trainer import run_balanced_pike, run_baseline, run_conceptual_pike, run_pike


class ConfigError(InputError):
    """Invalid configuration; ``key`` is the dotted path of the bad entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


NAMED_WEIGHTS = {"glam": GLAM_WEIGHTS, "doremi": DOREMI_WEIGHTS}
POLICY_KINDS = ("mix", "random", "round_robin", "pike", "balanced", "conceptual")

_TOP_KEYS = {"seed", "steps", "batch_size", "oracle", "tasks", "theta0", "policy", "optimizer",
             "stats_every", "min_per_task", "sweep"}
_POLICY_KEYS = {"kind", "weights", "zeta1", "zeta2", "T0", "w_min", "tau", "square", "eta", "beta",
                "gamma", "L", "recompute_beta", "init_weights"}
_OPT_KEYS = {"kind", "eta_peak", "eta_init_final", "warmup_steps", "total_steps", "beta1", "beta2",
             "weight_decay", "clip_norm"}


def _num(d, key, path, default=None, lo=None, lo_strict=False, integer=False, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{path}{key}", "missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}{key}", f"expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{path}{key}", "must be finite")
    if integer:
        if int(v) != v:
            raise ConfigError(f"{path}{key}", f"expected an integer, got {v!r}")
        v = int(v)
    if lo is not None and (v <= lo if lo_strict else v < lo):
        raise ConfigError(f"{path}{key}", f"must be {'>' if lo_strict else '>='} {lo}, got {v!r}")
    return v


def _bool(d, key, path, default):
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{path}{key}", f"expected true/false, got {v!r}")
    return v


def _vector(v, key, length=None):
    if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                          for x in v):
        raise ConfigError(key, "expected a list of numbers")
    if length is not None and len(v) != length:
        raise ConfigError(key, f"expected {length} entries, got {len(v)}")
    return np.array(v, dtype=float)


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(path.rstrip(".") or "<root>", "expected an object")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{path}{k}", "unknown key")


def _weights(v, key, k):
    if isinstance(v, str):
        if v not in NAMED_WEIGHTS:
            raise ConfigError(key, f"unknown named weights {v!r}")
        v = list(NAMED_WEIGHTS[v])
    arr = _vector(v, key, k)
    try:
        return SimplexWeights.normalized(arr) if abs(arr.sum() - 1) < 1e-6 else SimplexWeights(arr)
    except InputError as e:
        raise ConfigError(key, str(e)) from None


def _parse_task(d, i, rng):
    path = f"tasks[{i}]."
    if not isinstance(d, dict):
        raise ConfigError(path.rstrip("."), "expected an object")
    kind = d.get("type", "axis")
    if kind == "axis":
        _check_keys(d, {"type", "axis", "dim", "smoothness", "sigma_sq"}, path)
        dim = _num(d, "dim", path, required=True, integer=True, lo=1)
        axis = _num(d, "axis", path, required=True, integer=True, lo=0)
        if axis >= dim:
            raise ConfigError(f"{path}axis", f"must be < dim={dim}")
        return AxisQuadratic(axis, _num(d, "smoothness", path, 1.0, lo=0, lo_strict=True),
                             _num(d, "sigma_sq", path, 0.0, lo=0), dim)
    if kind == "random":
        _check_keys(d, {"type", "dim", "smoothness", "sigma_sq", "center_scale"}, path)
        dim = _num(d, "dim", path, required=True, integer=True, lo=1)
        return random_quadratic(dim, _num(d, "smoothness", path, 1.0, lo=0, lo_strict=True),
                                _num(d, "sigma_sq", path, 0.0, lo=0), rng,
                                _num(d, "center_scale", path, 1.0, lo=0))
    raise ConfigError(f"{path}type", f"unknown task type {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    steps: int
    batch_size: int
    oracle: bool
    tasks: tuple
    theta0: np.ndarray
    kind: str
    policy: Dict[str, Any]
    optimizer: OptimizerConfig
    stats_every: int
    min_per_task: int
    tilt: Optional[TiltConfig]
    sweep_repeats: int = 1
    sweep_grid_step: float = 0.1

    @property
    def k(self) -> int:
        return len(self.tasks)


def parse_config(raw: Dict[str, Any], seed: Optional[int] = None) -> ExperimentConfig:
    """Validate a decoded JSON config; ``seed`` overrides the config's seed."""
    _check_keys(raw, _TOP_KEYS, "")
    cfg_seed = _num(raw, "seed", "", 0, lo=0, integer=True)
    if seed is not None:
        cfg_seed = seed
    steps = _num(raw, "steps", "", required=True, integer=True, lo=1)
    b = _num(raw, "batch_size", "", 256, integer=True, lo=1)
    oracle = _bool(raw, "oracle", "", False)
    stats_every = _num(raw, "stats_every", "", 1000, integer=True, lo=1)
    min_per_task = _num(raw, "min_per_task", "", 8, integer=True, lo=2)

    tasks_raw = raw.get("tasks")
    if not isinstance(tasks_raw, list) or not tasks_raw:
        raise ConfigError("tasks", "expected a nonempty list")
    # random tasks draw from a stream tied to the seed so configs stay reproducible
    task_rng = np.random.default_rng([cfg_seed, 0x7A5C])
    tasks = tuple(_parse_task(d, i, task_rng) for i, d in enumerate(tasks_raw))
    dims = {t.dim for t in tasks}
    if len(dims) != 1:
        raise ConfigError("tasks", f"tasks disagree on dimension: {sorted(dims)}")
    dim = dims.pop()
    k = len(tasks)
    theta0 = _vector(raw["theta0"], "theta0", dim) if "theta0" in raw else np.ones(dim)

    pol = raw.get("policy")
    _check_keys(pol if pol is not None else {}, _POLICY_KEYS, "policy.")
    pol = dict(pol or {})
    kind = pol.get("kind", "pike")
    if kind not in POLICY_KINDS:
        raise ConfigError("policy.kind", f"must be one of {', '.join(POLICY_KINDS)}; got {kind!r}")
    p: Dict[str, Any] = {}
    tilt = None
    if "tau" in pol:
        tau = _num(pol, "tau", "policy.")
        if not tau > 0:
            raise ConfigError("policy.tau", f"must be > 0, got {tau!r}")
        tilt = TiltConfig(tau, _bool(pol, "square", "policy.", True))
    if kind == "balanced" and tilt is None:
        raise ConfigError("policy.tau", "required for the balanced policy")
    if kind == "mix":
        if "weights" not in pol:
            raise ConfigError("policy.weights", "required for the mix policy")
        p["weights"] = _weights(pol["weights"], "policy.weights", k)
    if kind in ("pike", "balanced"):
        p["pike"] = PikeConfig(
            zeta1=_num(pol, "zeta1", "policy.", 0.1, lo=0),
            zeta2=_num(pol, "zeta2", "policy.", 0.01, lo=0),
            T0=_num(pol, "T0", "policy.", 1000, integer=True, lo=1),
            b=b,
            w_min=_num(pol, "w_min", "policy.", 1e-6, lo=0),
        )
    if kind in ("pike", "balanced", "conceptual") and "init_weights" in pol:
        p["init_weights"] = _weights(pol["init_weights"], "policy.init_weights", k)
    if kind == "conceptual":
        p["eta"] = _num(pol, "eta", "policy.", required=True, lo=0, lo_strict=True)
        p["beta"] = _num(pol, "beta", "policy.", 1.0, lo=0, lo_strict=True)
        p["gamma"] = _num(pol, "gamma", "policy.", 1.0, lo=0, lo_strict=True)
        p["L"] = _num(pol, "L", "policy.", total_smoothness(tasks), lo=0, lo_strict=True)
        p["recompute_beta"] = _bool(pol, "recompute_beta", "policy.", False)

    opt_raw = raw.get("optimizer", {})
    _check_keys(opt_raw, _OPT_KEYS, "optimizer.")
    try:
        clip = opt_raw.get("clip_norm", None)
        if clip is not None:
            clip = _num(opt_raw, "clip_norm", "optimizer.", lo=0, lo_strict=True)
        peak = _num(opt_raw, "eta_peak", "optimizer.", 0.05, lo=0, lo_strict=True)
        optimizer = OptimizerConfig(
            kind=opt_raw.get("kind", "sgd"),
            eta_peak=peak,
            eta_init_final=_num(opt_raw, "eta_init_final", "optimizer.", peak, lo=0),
            warmup_steps=_num(opt_raw, "warmup_steps", "optimizer.", 0, integer=True, lo=0),
            total_steps=_num(opt_raw, "total_steps", "optimizer.", 0, integer=True, lo=0),
            beta1=_num(opt_raw, "beta1", "optimizer.", 0.95, lo=0),
            beta2=_num(opt_raw, "beta2", "optimizer.", 0.98, lo=0),
            weight_decay=_num(opt_raw, "weight_decay", "optimizer.", 0.0, lo=0),
            clip_norm=clip,
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("optimizer", str(e)) from None

    sw = raw.get("sweep", {})
    _check_keys(sw, {"repeats", "grid_step"}, "sweep.")
    repeats = _num(sw, "repeats", "sweep.", 1, integer=True, lo=1)
    grid_step = _num(sw, "grid_step", "sweep.", 0.1, lo=0, lo_strict=True)
    n = round(1 / grid_step)
    if grid_step > 1 or abs(n * grid_step - 1) > 1e-9:
        raise ConfigError("sweep.grid_step", f"must divide 1, got {grid_step!r}")

    return ExperimentConfig(cfg_seed, steps, b, oracle, tasks, theta0, kind, p, optimizer,
                            stats_every, min_per_task, tilt, repeats, grid_step)


def load_config(path: str, seed: Optional[int] = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"invalid JSON at line {e.lineno}: {e.msg}") from None
    return parse_config(raw, seed)


def run_experiment(cfg: ExperimentConfig) -> List[TrainRecord]:
    tasks, th0, p = list(cfg.tasks), cfg.theta0, cfg.policy
    common = dict(oracle=cfg.oracle, min_per_task=cfg.min_per_task)
    if cfg.kind in ("mix", "random", "round_robin"):
        strategy = StrategyConfig(cfg.kind, p.get("weights"), cfg.seed)
        return run_baseline(tasks, th0, strategy, cfg.optimizer, cfg.steps, cfg.seed, cfg.batch_size,
                            stats_every=cfg.stats_every, tilt=cfg.tilt, **common)
    if cfg.kind == "pike":
        return run_pike(tasks, th0, p["pike"], cfg.optimizer, cfg.steps, cfg.seed,
                        init_weights=p.get("init_weights"), tilt=cfg.tilt, **common)
    if cfg.kind == "balanced":
        return run_balanced_pike(tasks, th0, p["pike"], cfg.tilt, cfg.optimizer, cfg.steps, cfg.seed,
                                 init_weights=p.get("init_weights"), **common)
    return run_conceptual_pike(tasks, th0, cfg.batch_size, p["eta"], p["beta"], p["gamma"], p["L"],
                               cfg.steps, cfg.seed, oracle_mode=cfg.oracle,
                               init_weights=p.get("init_weights"),
                               recompute_beta=p["recompute_beta"], tilt=cfg.tilt,
                               min_per_task=cfg.min_per_task)


# --- CSV ------------------------------------------------------------------------


def csv_header(k: int) -> List[str]:
    cols = ["step", "total_loss", "tilted_loss"]
    for name in ("loss", "w", "gnorm2", "var"):
        cols += [f"{name}_{i}" for i in range(k)]
    return cols + ["c_under", "c_over", "beta", "gamma"]


def _fmt(x) -> str:
    return repr(float(x))


def record_row(r: TrainRecord) -> List[str]:
    k = len(r.per_task_loss)
    row = [str(r.step), _fmt(r.total_loss), "" if r.tilted_loss is None else _fmt(r.tilted_loss)]
    row += [_fmt(v) for v in r.per_task_loss]
    row += [_fmt(v) for v in r.weights.w]
    row += [_fmt(s.grad_norm_sq) for s in r.stats]
    row += [_fmt(s.var) for s in r.stats]
    if r.conflict is None:
        # a single task has no pairs: no conflict, no alignment
        row += [_fmt(0.0), _fmt(0.0), _fmt(1.0), _fmt(1.0)]
    else:
        c = r.conflict
        row += [_fmt(c.c_under), _fmt(c.c_over), _fmt(c.beta), _fmt(c.gamma)]
    assert len(row) == 3 + 4 * k + 4
    return row


def records_to_csv(records: List[TrainRecord], k: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(k))
    for r in records:
        w.writerow(record_row(r))
    return buf.getvalue()


def write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# --- static-weight sweep ---------------------------------------------------------


def simplex_grid(k: int, step: float = 0.1) -> List[np.ndarray]:
    """All simplex points whose coordinates are multiples of ``step``."""
    n = int(round(1 / step))
    if k < 1 or abs(n * step - 1) > 1e-9:
        raise InputError("step must divide 1")
    pts = []

    def rec(prefix, left, slots):
        if slots == 1:
            pts.append(np.array(prefix + [left]) / n)
            return
        for i in range(left, -1, -1):
            rec(prefix + [i], left - i, slots - 1)

    rec([], n, k)
    return pts


def sweep_rows(cfg: ExperimentConfig, grid_step: Optional[float] = None,
               repeats: Optional[int] = None):
    """Final per-task losses for each static grid point, then one PiKE run.

    With ``repeats > 1`` each policy runs on seeds ``seed .. seed+repeats-1``
    and the final losses are averaged.  Both default to the config's
    ``sweep`` section.
    """
    grid_step = cfg.sweep_grid_step if grid_step is None else grid_step
    repeats = cfg.sweep_repeats if repeats is None else repeats
    if repeats < 1:
        raise InputError("repeats must be >= 1")

    def final_losses(run_cfg):
        recs = [run_experiment(replace(run_cfg, seed=run_cfg.seed + r))[-1] for r in range(repeats)]
        losses = np.mean([r.per_task_loss for r in recs], axis=0)
        return recs[-1], losses

    rows = []
    for w in simplex_grid(cfg.k, grid_step):
        run_cfg = replace(cfg, kind="mix", policy={"weights": SimplexWeights.normalized(w)})
        _, losses = final_losses(run_cfg)
        rows.append(("mix", w, losses, float(losses.sum())))
    pike_policy = {"pike": cfg.policy.get("pike", PikeConfig(b=cfg.batch_size))}
    if "init_weights" in cfg.policy:
        pike_policy["init_weights"] = cfg.policy["init_weights"]
    last, losses = final_losses(replace(cfg, kind="pike", policy=pike_policy))
    rows.append(("pike", last.weights.w, losses, float(losses.sum())))
    return rows


def sweep_csv(rows, k: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy"] + [f"w_{i}" for i in range(k)] + [f"loss_{i}" for i in range(k)]
               + ["total_loss"])
    for name, weights, losses, total in rows:
        w.writerow([name] + [_fmt(x) for x in weights] + [_fmt(x) for x in losses] + [_fmt(total)])
    return buf.getvalue()


# Asymmetric-noise two-task instance used when sweep has no config.  Exact
# statistics keep the comparison about the mixing rule: near the optimum the
# task-1 gradient norm (~1e-3) sits far below what a few hundred noisy samples
# (sigma^2 = 9) can resolve.
DEFAULT_SWEEP_CONFIG = {
    "seed": 0,
    "steps": 400,
    "batch_size": 32,
    "oracle": True,
    "tasks": [
        {"type": "axis", "axis": 0, "dim": 2, "smoothness": 1.0, "sigma_sq": 9.0},
        {"type": "axis", "axis": 1, "dim": 2, "smoothness": 1.0, "sigma_sq": 0.01},
    ],
    "theta0": [1.0, 1.0],
    "policy": {"kind": "pike", "zeta1": 20.0, "zeta2": 2.0, "T0": 10},
    "optimizer": {"kind": "sgd", "eta_peak": 0.1},
    "sweep": {"repeats": 8, "grid_step": 0.1},
}


# --- two-axis worked example ---------------------------------------------------


@dataclass(frozen=True)
class Example1Config:
    theta0: tuple = (1.0, 1.0)
    sigma1_sq: float = 4.0
    sigma2_sq: float = 1.0
    eta: float = 0.1
    b: int = 4
    steps: int = 200
    reps: int = 20000
    seed: int = 0
    static_grid: tuple = tuple(round(0.1 * i, 1) for i in range(11))


def _moment_step(m, w1, c: Example1Config):
    w = np.array([w1, 1.0 - w1])
    noise = c.eta ** 2 * (w1 * c.sigma1_sq + (1 - w1) * c.sigma2_sq) / c.b
    return (1 - c.eta * w) ** 2 * m + noise


def example1_analytic(c: Example1Config):
    """Exact expected total loss per step for the adaptive schedule and each static w1.

    Expected losses evolve through the second moments ``m_k = E theta_k^2``.
    The adaptive schedule picks, each step, the w1 minimising the next
    expected loss given the current moments (open loop).  Returns
    ``(adaptive_loss, adaptive_w1, static_losses)`` with shapes
    ``(steps+1,)``, ``(steps,)``, ``(n_static, steps+1)``.
    """
    m0 = np.asarray(c.theta0, dtype=float) ** 2
    m = m0.copy()
    ad = [0.5 * m.sum()]
    ws = []
    for _ in range(c.steps):
        w1 = example1_optimal_w(math.sqrt(m[0]), math.sqrt(m[1]), c.sigma1_sq, c.sigma2_sq, c.eta, c.b)
        ws.append(w1)
        m = _moment_step(m, w1, c)
        ad.append(0.5 * m.sum())
    static = []
    for w1 in c.static_grid:
        m = m0.copy()
        tr = [0.5 * m.sum()]
        for _ in range(c.steps):
            m = _moment_step(m, w1, c)
            tr.append(0.5 * m.sum())
        static.append(tr)
    return np.array(ad), np.array(ws), np.array(static)


def example1_monte_carlo(c: Example1Config, schedules, feedback: bool = False):
    """Simulate theta <- theta - eta*(diag(w) theta + z) with z ~ N(0, (w.sigma^2/b) I).

    ``schedules`` has shape (P, steps) of w1 values.  With ``feedback`` a
    single extra policy is simulated whose w1 is recomputed from each
    trajectory's own theta.  Returns (mean, se) with shape (P[+1], steps+1).
    """
    rng = np.random.default_rng([c.seed, 0xE1])
    sched = np.atleast_2d(np.asarray(schedules, dtype=float))
    p = sched.shape[0] + (1 if feedback else 0)
    th = np.tile(np.asarray(c.theta0, dtype=float), (p, c.reps, 1))
    means, ses = np.empty((p, c.steps + 1)), np.empty((p, c.steps + 1))

    def record(t):
        loss = 0.5 * np.sum(th * th, axis=2)
        means[:, t] = loss.mean(axis=1)
        ses[:, t] = loss.std(axis=1, ddof=1) / math.sqrt(c.reps)

    record(0)
    for t in range(c.steps):
        w1 = np.empty((p, c.reps))
        w1[: sched.shape[0]] = sched[:, t][:, None]
        if feedback:
            a, bb = th[-1, :, 0] ** 2, th[-1, :, 1] ** 2
            s = a + bb
            xi = ((c.sigma2_sq - c.sigma1_sq) / c.b + (a - bb) / c.eta + bb) / np.where(s > 0, s, 1.0)
            w1[-1] = np.where(s > 0, np.clip(xi, 0.0, 1.0), 0.5)
        w = np.stack([w1, 1.0 - w1], axis=2)
        sd = np.sqrt((w1 * c.sigma1_sq + (1 - w1) * c.sigma2_sq) / c.b)
        z = rng.standard_normal(th.shape) * sd[:, :, None]
        th = th - c.eta * (w * th + z)
        record(t + 1)
    return means, ses


def example1_table(c: Example1Config):
    """Header and rows for the worked-example CSV.

    Columns: step; analytic expected loss for ``adaptive`` and each
    ``static_<w1>``; Monte-Carlo means and standard errors for the same 12
    policies; and a Monte-Carlo ``adaptive_feedback`` policy that recomputes
    w1 from each trajectory's realised theta.
    """
    ad, ws, static = example1_analytic(c)
    names = ["adaptive"] + [f"static_{w:.1f}" for w in c.static_grid]
    sched = np.vstack([ws[None, :], np.repeat(np.array(c.static_grid)[:, None], c.steps, axis=1)])
    mc, se = example1_monte_carlo(c, sched, feedback=True)
    analytic = np.vstack([ad[None, :], static])
    header = (["step"] + names + [f"mc_{n}" for n in names] + [f"se_{n}" for n in names]
              + ["mc_adaptive_feedback", "se_adaptive_feedback"])
    rows = []
    for t in range(c.steps + 1):
        rows.append([t] + list(analytic[:, t]) + list(mc[:-1, t]) + list(se[:-1, t])
                    + [mc[-1, t], se[-1, t]])
    return header, rows


def example1_csv(c: Example1Config) -> str:
    header, rows = example1_table(c)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([str(r[0])] + [_fmt(x) for x in r[1:]])
    return buf.getvalue()
