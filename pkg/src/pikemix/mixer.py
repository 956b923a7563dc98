"""Mixture-weight computations.

Conceptual PiKE minimises the one-step descent bound
``sum_k w_k*lambda_k + 0.5*w_k^2*kappa_k`` over the simplex exactly; the
practical variants take a single multiplicative (mirror-descent) step every
``T0`` iterations.  The tilted objective ``(1/tau) log sum exp(tau*L_k)``
drives the balanced variant through its dual weights ``y*``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import InputError, SimplexWeights, TaskGradStats, stack_stats

# Static mixtures reported for the six GLaM domains (webpages, wikipedia,
# conversations, forums, books, news).
GLAM_WEIGHTS = (0.42, 0.06, 0.28, 0.02, 0.20, 0.02)
DOREMI_WEIGHTS = (0.51, 0.05, 0.22, 0.04, 0.20, 0.02)
# (zeta1, zeta2) grid used for tuning in the LLM runs
ZETA_GRID = ((1e-2, 1e-3), (1.5e-2, 1e-3), (5e-2, 5e-3), (7.5e-2, 5e-3), (1e-1, 1e-2), (1.5e-1, 1e-2))

BISECT_TOL = 1e-12
BISECT_MAX_ITER = 200
# kappa below this fraction of the coefficient scale is treated as exactly 0;
# the dropped quadratic term is then negligible and 1/kappa cannot overflow
KAPPA_REL_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class KktCoefficients:
    lam: np.ndarray
    kappa: np.ndarray
    mu: Optional[float] = None

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        kappa = np.array(self.kappa, dtype=float)
        if lam.shape != kappa.shape or lam.ndim != 1:
            raise InputError("lambda and kappa must be vectors of equal length")
        if np.any(kappa < 0):
            raise InputError("kappa must be nonnegative")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "kappa", kappa)

    def objective(self, w) -> np.ndarray:
        """Bound objective; ``w`` may be a batch of points with shape (..., K)."""
        w = np.asarray(w, dtype=float)
        return w @ self.lam + 0.5 * (w * w) @ self.kappa


@dataclass(frozen=True)
class PikeConfig:
    zeta1: float = 0.1
    zeta2: float = 0.01
    T0: int = 1000
    b: int = 256
    w_min: float = 1e-6

    def __post_init__(self):
        # zeta1 = 0 is allowed for ablations (variance-only or frozen weights)
        if self.zeta1 < 0:
            raise InputError("zeta1 must be >= 0")
        if self.zeta2 < 0:
            raise InputError("zeta2 must be >= 0")
        if self.T0 < 1:
            raise InputError("T0 must be >= 1")
        if self.b < 1:
            raise InputError("b must be >= 1")
        if self.w_min < 0:
            raise InputError("w_min must be >= 0")


@dataclass(frozen=True)
class TiltConfig:
    tau: float
    square: bool = field(default=True)

    def __post_init__(self):
        if not self.tau > 0:
            raise InputError(f"tau must be > 0, got {self.tau}")


def kkt_coefficients(stats: Sequence[TaskGradStats], eta: float, beta: float, gamma: float,
                     L: float, b: int) -> KktCoefficients:
    if eta <= 0 or L <= 0 or b < 1:
        raise InputError("need eta > 0, L > 0, b >= 1")
    gnorm, var, _ = stack_stats(stats)
    return coefficients_from_arrays(gnorm, var, eta, beta, gamma, L, b)


def coefficients_from_arrays(gnorm, var, eta, beta, gamma, L, b) -> KktCoefficients:
    gnorm = np.asarray(gnorm, dtype=float)
    var = np.asarray(var, dtype=float)
    lam = -eta * beta * gnorm + (L * eta ** 2 / (2 * b)) * var
    kappa = L * eta ** 2 * gamma * gnorm
    return KktCoefficients(lam, kappa)


def _mass(mu, lam, kappa):
    return np.sum(np.maximum(0.0, -(mu + lam) / kappa))


def _closed_form(lam, kappa, active):
    """mu and w when ``active`` is the support; None if KKT fails for that support."""
    inv = 1.0 / kappa[active]
    mu = -(1.0 + np.sum(lam[active] * inv)) / np.sum(inv)
    raw = -(mu + lam) / kappa
    if np.all(raw[active] >= 0) and np.all(raw[~active] <= 0):
        w = np.where(active, np.maximum(raw, 0.0), 0.0)
        return w, mu
    return None


def _bisect_mu(lam, kappa, lo, hi):
    """Bisection on mu for sum max(0, -(mu+lam)/kappa) = 1; the mass is nonincreasing in mu.

    Each midpoint's support is tried in closed form, which usually ends the
    search after a handful of halvings with an exact answer.
    """
    mid = 0.5 * (lo + hi)
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        raw = -(mid + lam) / kappa
        active = raw > 0
        if active.any():
            found = _closed_form(lam, kappa, active)
            if found is not None:
                return found
        s = np.sum(np.maximum(raw, 0.0))
        if abs(s - 1.0) <= BISECT_TOL:
            break
        if s > 1.0:
            lo = mid
        else:
            hi = mid
    w = np.maximum(0.0, -(mid + lam) / kappa)
    return w, mid


def solve_simplex_qp(coeffs: KktCoefficients) -> SimplexWeights:
    """Exact minimiser of the separable bound QP over the simplex.

    Tasks with ``kappa_k == 0`` contribute a linear term; if any exist the
    ones with the smallest ``lambda_k`` soak up whatever mass the strictly
    convex tasks leave, split equally among ties.
    """
    w, _ = solve_simplex_qp_with_mu(coeffs)
    return w


def solve_simplex_qp_with_mu(coeffs: KktCoefficients):
    lam, kappa = coeffs.lam, coeffs.kappa
    k = lam.size
    if k == 0:
        raise InputError("need at least one task")
    if k == 1:
        return SimplexWeights([1.0]), float(-(lam[0] + kappa[0]))

    # the minimiser is invariant to a common positive scale; solving at unit
    # scale keeps 1/kappa and the bisection bracket finite
    scale = max(float(np.max(np.abs(lam))), float(np.max(kappa)))
    if scale > 0:
        w, mu = _solve_unit_scale(lam / scale, kappa / scale)
        return w, mu * scale
    return _solve_unit_scale(lam, kappa)


def _solve_unit_scale(lam, kappa):
    k = lam.size
    flat = kappa <= KAPPA_REL_FLOOR
    pos = ~flat
    if flat.any():
        lam0 = lam[flat].min()
        tol = 1e-12 * max(1.0, abs(lam0))
        mu_floor = -lam0
        if pos.any():
            mass_at_floor = _mass(mu_floor, lam[pos], kappa[pos])
        else:
            mass_at_floor = 0.0
        if mass_at_floor < 1.0:
            w = np.zeros(k)
            if pos.any():
                w[pos] = np.maximum(0.0, -(mu_floor + lam[pos]) / kappa[pos])
            ties = flat & (lam <= lam0 + tol)
            w[ties] = (1.0 - w.sum()) / ties.sum()
            return SimplexWeights.normalized(w), float(mu_floor)
        # strictly convex tasks alone fill the simplex; mu >= -lam0
        lo, hi = mu_floor, -lam[pos].min()
        lam_p, kap_p = lam[pos], kappa[pos]
        wp, mu = _bisect_mu(lam_p, kap_p, lo, max(hi, lo))
        w = np.zeros(k)
        w[pos] = wp
        return SimplexWeights.normalized(w), float(mu)

    lo = -lam.max() - kappa.max()
    hi = -lam.min()
    w, mu = _bisect_mu(lam, kappa, lo, hi)
    return SimplexWeights.normalized(w), float(mu)


def _multiplicative_update(w, log_mult, w_min: float = 0.0) -> SimplexWeights:
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(w) + log_mult
    logw -= np.max(logw)
    out = np.exp(logw)
    out /= out.sum()
    if w_min > 0:
        out = np.maximum(out, w_min)
        out /= out.sum()
    return SimplexWeights.normalized(out)


def pike_exponent(stats: Sequence[TaskGradStats], cfg: PikeConfig) -> np.ndarray:
    gnorm, var, _ = stack_stats(stats)
    return cfg.zeta1 * gnorm - (cfg.zeta2 / (2 * cfg.b)) * var


def pike_update(w, stats: Sequence[TaskGradStats], cfg: PikeConfig) -> SimplexWeights:
    """w_k <- w_k * exp(zeta1*|grad_k|^2 - zeta2/(2b)*sigma_k^2), then floor and renormalise."""
    return _multiplicative_update(w, pike_exponent(stats, cfg), cfg.w_min)


def mirror_step_exact(w, stats: Sequence[TaskGradStats], eta: float, beta: float, gamma: float,
                      L: float, alpha: float, b: int) -> SimplexWeights:
    w = np.asarray(w, dtype=float)
    gnorm, var, _ = stack_stats(stats)
    expo = alpha * eta * (beta - L * eta * gamma * w) * gnorm - (alpha * L * eta ** 2 / (2 * b)) * var
    return _multiplicative_update(w, expo)


def tilt_weights(losses, cfg: TiltConfig) -> np.ndarray:
    """Dual weights y* = tau * softmax(tau * losses); they sum to tau."""
    z = cfg.tau * np.asarray(losses, dtype=float)
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    return cfg.tau * p


def balanced_pike_update(w, stats: Sequence[TaskGradStats], losses, tilt: TiltConfig,
                         cfg: PikeConfig) -> SimplexWeights:
    y = tilt_weights(losses, tilt)
    scale = y ** 2 if tilt.square else y
    return _multiplicative_update(w, scale * pike_exponent(stats, cfg), cfg.w_min)


def tilted_loss(losses, cfg: TiltConfig) -> float:
    losses = np.asarray(losses, dtype=float)
    return float(logsumexp(cfg.tau * losses) / cfg.tau)


def tilted_dual_objective(y, losses, tau: float) -> float:
    """sum y_k L_k - sum (y_k/tau) log(y_k/tau), with 0 log 0 = 0."""
    y = np.asarray(y, dtype=float)
    losses = np.asarray(losses, dtype=float)
    p = y / tau
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(p > 0, p * np.log(p), 0.0)
    return float(y @ losses - ent.sum())


def duality_gap(losses, cfg: TiltConfig) -> float:
    losses = np.asarray(losses, dtype=float)
    y = tilt_weights(losses, cfg)
    return abs(tilted_dual_objective(y, losses, cfg.tau) - float(logsumexp(cfg.tau * losses)))


def example1_optimal_w(theta1: float, theta2: float, sigma1_sq: float, sigma2_sq: float,
                       eta: float, b: float) -> float:
    """Closed-form best share for task 1 in the two-axis example, projected onto [0, 1].

    Noise variances are per coordinate (x_k ~ N(0, sigma_k^2 I)).
    """
    s1, s2 = theta1 ** 2, theta2 ** 2
    if s1 + s2 == 0:
        return 0.5
    if eta <= 0 or b <= 0:
        raise InputError("need eta > 0 and b > 0")
    xi = ((sigma2_sq - sigma1_sq) / b + (s1 - s2) / eta + s2) / (s1 + s2)
    return float(min(max(xi, 0.0), 1.0))


def example1_expected_loss(theta1, theta2, b1, b2, eta, sigma1_sq, sigma2_sq):
    """Expected total loss after one SGD step in the two-axis example.

    ``b1``/``b2`` may be real (relaxed shares); arrays broadcast.
    """
    b = b1 + b2
    if np.any(np.asarray(b) <= 0):
        raise InputError("b1 + b2 must be positive")
    return (0.5 * (1 - eta * b1 / b) ** 2 * theta1 ** 2
            + 0.5 * (1 - eta * b2 / b) ** 2 * theta2 ** 2
            + eta ** 2 * (b1 * sigma1_sq + b2 * sigma2_sq) / b ** 2)
