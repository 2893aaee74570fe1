"""Energy clipping, Jacobian centering, and the preconditioned update rule."""

import numpy as np
import pytest

from pfvmc.errors import InvalidInputError
from pfvmc.optimizer import (
    ClipConfig,
    Schedule,
    SpringState,
    center_jacobian_per_molecule,
    clip_energies,
    spring_init,
    spring_update,
    vmc_gradient_samples,
)


# ---------------------------------------------------------------------------
# clipping
# ---------------------------------------------------------------------------


def test_clip_hand_example():
    # median 0, mean absolute deviation 2, factor 2 -> window [-4, 4]
    e = np.array([0.0, 0.0, 0.0, 0.0, 10.0])
    out = clip_energies(e, ClipConfig(2.0))
    np.testing.assert_allclose(out, [0.0, 0.0, 0.0, 0.0, 4.0])


def test_clip_keeps_inliers():
    e = np.array([-1.0, 0.0, 1.0, 2.0])
    np.testing.assert_allclose(clip_energies(e, ClipConfig(5.0)), e)


def test_clip_is_two_sided():
    e = np.array([0.0, 0.0, 0.0, 0.0, -10.0])
    out = clip_energies(e, ClipConfig(2.0))
    assert out.min() == pytest.approx(-4.0)


def test_clip_validation():
    with pytest.raises(InvalidInputError):
        clip_energies(np.array([1.0]), ClipConfig(0.0))
    with pytest.raises(InvalidInputError):
        clip_energies(np.array([]), ClipConfig(5.0))


# ---------------------------------------------------------------------------
# centering and gradient assembly
# ---------------------------------------------------------------------------


def test_centering_zeroes_block_column_sums():
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((9, 5))
    out = center_jacobian_per_molecule(rows, [4, 5])
    assert np.max(np.abs(out[:4].sum(axis=0))) < 1e-12
    assert np.max(np.abs(out[4:].sum(axis=0))) < 1e-12
    # original array untouched
    assert not np.allclose(rows[:4].sum(axis=0), 0.0)


def test_centering_requires_partition():
    with pytest.raises(InvalidInputError):
        center_jacobian_per_molecule(np.zeros((5, 2)), [2, 2])


def test_gradient_hand_example():
    clipped = np.array([1.0, 3.0])
    rows = np.array([[1.0, 0.0], [0.0, 1.0]])
    grad = vmc_gradient_samples(clipped, rows, [2])
    np.testing.assert_allclose(grad, [-0.5, 0.5])


def test_gradient_centers_per_molecule():
    # two molecules with different mean energies: each block is centered
    # against its own mean, so a constant offset in one block contributes nothing
    clipped = np.array([1.0, 1.0, 100.0, 100.0])
    rows = np.ones((4, 3))
    grad = vmc_gradient_samples(clipped, rows, [2, 2])
    np.testing.assert_allclose(grad, 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# learning-rate schedule
# ---------------------------------------------------------------------------


def test_schedule_values():
    sched = Schedule(eta0=0.02, decay=1e-4)
    assert sched.eta(0) == 0.02
    assert sched.eta(10_000) == 0.01  # 0.02 / (1 + 1), exact in floating point


# ---------------------------------------------------------------------------
# preconditioned update
# ---------------------------------------------------------------------------


def test_spring_init_validation():
    with pytest.raises(InvalidInputError):
        spring_init(4, lam=0.0)
    with pytest.raises(InvalidInputError):
        spring_init(4, mu=1.0)
    state = spring_init(4)
    assert state.delta.shape == (4,)
    assert state.t == 0


def primal_solution(obar, eps, state):
    """Damped normal equations the dual solve must reproduce:
    (O^T O + lam I) delta = O^T eps + lam mu delta_prev."""
    p = obar.shape[1]
    lhs = obar.T @ obar + state.lam * np.eye(p)
    rhs = obar.T @ eps + state.lam * state.mu * state.delta
    base = np.linalg.solve(lhs, rhs)
    return base


def test_dual_solve_matches_primal_equations():
    rng = np.random.default_rng(1)
    obar = rng.standard_normal((8, 20)) / np.sqrt(8)
    eps = rng.standard_normal(8)
    state = SpringState(rng.standard_normal(20) * 0.1, lam=0.5, mu=0.3, norm_c=1e12, t=5)
    delta, new_state = spring_update(obar, eps, state, eta=1e-6)
    np.testing.assert_allclose(delta, primal_solution(obar, eps, state), rtol=1e-10)
    assert new_state.t == 6
    np.testing.assert_array_equal(new_state.delta, delta)


def test_dual_solve_matches_primal_without_momentum():
    rng = np.random.default_rng(2)
    obar = rng.standard_normal((6, 15))
    eps = rng.standard_normal(6)
    state = SpringState(np.zeros(15), lam=0.05, mu=0.0, norm_c=1e12, t=0)
    delta, _ = spring_update(obar, eps, state, eta=1e-6)
    np.testing.assert_allclose(delta, primal_solution(obar, eps, state), rtol=1e-10)


def test_huge_damping_recovers_plain_gradient_direction():
    rng = np.random.default_rng(3)
    obar = rng.standard_normal((16, 40))
    eps = rng.standard_normal(16)
    state = SpringState(np.zeros(40), lam=1e6, mu=0.0, norm_c=1e12, t=0)
    delta, _ = spring_update(obar, eps, state, eta=1e-9)
    plain = obar.T @ eps
    cosine = delta @ plain / (np.linalg.norm(delta) * np.linalg.norm(plain))
    assert cosine > 0.999


def test_zero_jacobian_gives_pure_momentum():
    prev = np.array([1.0, -2.0, 0.5])
    state = SpringState(prev.copy(), lam=0.1, mu=0.7, norm_c=1e12, t=0)
    delta, _ = spring_update(np.zeros((4, 3)), np.ones(4), state, eta=1e-6)
    np.testing.assert_allclose(delta, 0.7 * prev, rtol=1e-14)


def test_norm_constraint_caps_step():
    rng = np.random.default_rng(4)
    obar = rng.standard_normal((8, 10))
    eps = rng.standard_normal(8) * 100.0
    norm_c = 1e-3
    state = SpringState(np.zeros(10), lam=0.01, mu=0.0, norm_c=norm_c, t=0)
    eta = 0.5
    delta, _ = spring_update(obar, eps, state, eta=eta)
    assert eta * np.linalg.norm(delta) == pytest.approx(np.sqrt(norm_c), rel=1e-10)


def test_small_step_not_rescaled():
    rng = np.random.default_rng(5)
    obar = rng.standard_normal((8, 10)) * 1e-3
    eps = rng.standard_normal(8) * 1e-3
    state = SpringState(np.zeros(10), lam=0.1, mu=0.0, norm_c=1e-3, t=0)
    delta, _ = spring_update(obar, eps, state, eta=1e-4)
    np.testing.assert_allclose(delta, primal_solution(obar, eps, state), rtol=1e-10)
