import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pikemix.core import BatchPlan, InputError
from pikemix.stats import (
    beta_constant,
    conflict_profile,
    correlation_bounds,
    estimate_task_stats,
    exact_task_stats,
    gamma_constant,
    stats_from_samples,
)
from pikemix.tasks import AxisQuadratic


def test_hand_example():
    s = stats_from_samples([[1.0, 0.0], [3.0, 0.0]], [0.0, 0.0])
    np.testing.assert_array_equal(s.mean_grad, [2.0, 0.0])
    assert s.var == 2.0
    assert s.grad_norm_sq == 3.0
    raw = stats_from_samples([[1.0, 0.0], [3.0, 0.0]], [0.0, 0.0], correct_bias=False)
    assert raw.grad_norm_sq == 4.0


def test_zero_noise_exact():
    task = AxisQuadratic(0, 1.0, 0.0, 2)
    for n in (2, 7, 100):
        s = estimate_task_stats(task, np.array([3.0, 0.0]), n, np.random.default_rng(n))
        assert s.var == 0.0 and s.grad_norm_sq == 9.0


def test_large_sample_estimates():
    task = AxisQuadratic(0, 1.0, 4.0, 2)
    s = estimate_task_stats(task, np.array([1.0, 0.0]), 100_000, np.random.default_rng(0))
    assert abs(s.grad_norm_sq - 1.0) <= 0.05
    assert abs(s.var - 4.0) <= 0.1


def test_needs_two_samples():
    with pytest.raises(InputError):
        estimate_task_stats(AxisQuadratic(0, 1.0, 1.0, 2), np.zeros(2), 1, np.random.default_rng(0))


def test_clamp_keeps_nonnegative():
    task = AxisQuadratic(0, 1.0, 4.0, 2)
    rng = np.random.default_rng(1)
    seen_negative = False
    for _ in range(200):
        s = estimate_task_stats(task, np.zeros(2), 4, rng)
        assert s.grad_norm_sq >= 0
        seen_negative |= s.grad_norm_sq_unclamped < 0
    assert seen_negative


def test_exact_stats():
    s = exact_task_stats(AxisQuadratic(1, 2.0, 3.0, 3), np.array([5.0, 1.0, 0.0]))
    assert (s.loss, s.grad_norm_sq, s.var) == (1.0, 4.0, 3.0)


def test_orthogonal_profile():
    p = conflict_profile(np.eye(3) * [1.0, 2.0, 3.0], BatchPlan((1, 1, 1), 3))
    assert (p.c_under, p.c_over, p.beta, p.gamma) == (0.0, 0.0, 1.0, 1.0)


def test_beta_gamma_examples():
    assert beta_constant(0.1, BatchPlan((128, 128), 256)) == pytest.approx(0.8, abs=1e-15)
    assert gamma_constant(0.5, 3) == 2.0
    # zero-count tasks are left out of the min
    assert beta_constant(0.1, BatchPlan((256, 0), 256)) == pytest.approx(0.9, abs=1e-15)

    # BatchPlan itself rejects an empty plan, so feed a stand-in
    class Empty:
        total = 1

        def as_array(self):
            return np.zeros(2, dtype=int)

    with pytest.raises(InputError):
        beta_constant(0.1, Empty())


def test_profile_measurements():
    g = np.array([[1.0, 0.0], [-1.0, 1.0]])
    p = conflict_profile(g)
    assert p.c_under == pytest.approx(1 / 3)
    assert p.c_over == 0.0
    np.testing.assert_allclose(p.cosine[0, 1], -1 / np.sqrt(2))
    assert np.isnan(p.beta)


def test_zero_gradient_cosine_is_zero():
    p = conflict_profile(np.array([[0.0, 0.0], [1.0, 2.0]]))
    assert p.cosine[0, 1] == 0.0 and p.ratio[0, 1] == 0.0


def test_needs_two_tasks():
    with pytest.raises(InputError):
        conflict_profile(np.ones((1, 3)))


def test_am_gm_implication():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        k, d = rng.integers(2, 6), rng.integers(1, 6)
        g = rng.normal(size=(k, d)) * rng.exponential(size=(k, 1))
        p = conflict_profile(g)
        off = ~np.eye(k, dtype=bool)
        c_tilde = max(0.0, -p.cosine[off].min())
        assert np.all(p.ratio[off] >= -c_tilde / 2 - 1e-12)


def test_correlation_bounds_hand_case():
    # two orthogonal gradients: no conflict, no alignment, equality in both
    cb = correlation_bounds(np.array([[1.0, 0.0], [0.0, 2.0]]))
    assert cb.sum_sq == 5.0 and cb.sum_norm_sq == 5.0
    assert cb.lower_rhs == 5.0 and cb.upper_rhs == 5.0


def test_correlation_bounds_strong_conflict_has_no_lower():
    cb = correlation_bounds(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert cb.lower_rhs is None


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_correlation_bounds_hold(k, d, seed):
    g = np.random.default_rng(seed).normal(size=(k, d))
    cb = correlation_bounds(g)
    if cb.lower_rhs is not None:
        assert cb.sum_sq <= cb.lower_rhs * (1 + 1e-9) + 1e-12
    assert cb.sum_norm_sq <= cb.upper_rhs * (1 + 1e-9) + 1e-12
