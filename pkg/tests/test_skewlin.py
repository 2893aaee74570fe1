"""Skew linear algebra: Pfaffian identities, gradients, Cayley maps.

Expected values come from independent oracles computed here: determinants via
an explicit LU factorization (not the library under test), gradients via
central finite differences, and hand-expanded small Pfaffians.
"""

import math

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import lu_factor

from pfvmc import skewlin as sl
from pfvmc.errors import DimensionError, InvalidInputError, SingularMatrixError


def det_via_lu(a: np.ndarray) -> float:
    """Determinant from LU with partial pivoting, independent of the code under test."""
    lu, piv = lu_factor(a)
    det = float(np.prod(np.diagonal(lu)))
    swaps = int(np.sum(piv != np.arange(len(piv))))
    return det * (-1.0) ** swaps


def random_skew(n: int, rng: np.random.Generator) -> np.ndarray:
    m = rng.normal(size=(n, n))
    return 0.5 * (m - m.T)


def fd_directional(fun, x: np.ndarray, direction: np.ndarray, h: float = 1e-6) -> float:
    return (fun(x + h * direction) - fun(x - h * direction)) / (2 * h)


# ---------------------------------------------------------------------------
# Pfaffian values


def test_pfaffian_2x2():
    got = sl.pfaffian_signlog(np.array([[0.0, 3.0], [-3.0, 0.0]]))
    assert got.sign == 1.0
    assert got.log_abs == pytest.approx(math.log(3.0), abs=1e-15)


def test_pfaffian_skew_identity():
    got = sl.pfaffian_signlog(sl.skew_identity(6))
    assert got.sign == 1.0
    assert got.log_abs == pytest.approx(0.0, abs=1e-15)


def test_pfaffian_4x4_explicit_expansion():
    # Pf of a 4x4 skew matrix is a01 a23 - a02 a13 + a03 a12.
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = random_skew(4, rng)
        ref = a[0, 1] * a[2, 3] - a[0, 2] * a[1, 3] + a[0, 3] * a[1, 2]
        assert sl.pfaffian(a) == pytest.approx(ref, rel=1e-12)


def test_pfaffian_squared_equals_determinant():
    rng = np.random.default_rng(11)
    for n in range(2, 21, 2):
        for _ in range(10):
            a = random_skew(n, rng)
            s, l = sl.pfaffian_signlog(a)
            det = det_via_lu(a)
            assert s != 0.0
            assert math.exp(2 * l) == pytest.approx(det, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    n=st.sampled_from([2, 4, 6, 8, 10]),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_pfaffian_congruence_property(n, seed):
    # Pf(B A B^T) = det(B) Pf(A) for any B.
    rng = np.random.default_rng(seed)
    a = random_skew(n, rng)
    b = rng.normal(size=(n, n))
    lhs = sl.pfaffian_signlog(b @ a @ b.T)
    pf_a = sl.pfaffian_signlog(a)
    det_b = det_via_lu(b)
    ref = det_b * pf_a.sign * math.exp(pf_a.log_abs)
    got = lhs.sign * math.exp(lhs.log_abs)
    assert got == pytest.approx(ref, rel=1e-9)


def test_pfaffian_underflow_returns_sign_zero():
    a = sl.skew_identity(4) * 1e-310
    got = sl.pfaffian_signlog(a)
    assert got.sign == 0.0
    assert got.log_abs == -math.inf


def test_pfaffian_rejects_odd_dimension():
    with pytest.raises(DimensionError):
        sl.pfaffian_signlog(np.zeros((3, 3)))


def test_pfaffian_rejects_nonfinite():
    a = sl.skew_identity(4)
    a[0, 1] = np.nan
    with pytest.raises(InvalidInputError):
        sl.pfaffian_signlog(a)


# ---------------------------------------------------------------------------
# Pfaffian gradient


def test_grad_log_pfaffian_2x2_directional():
    a = np.array([[0.0, 2.0], [-2.0, 0.0]])
    g = sl.grad_log_pfaffian(a)
    assert g[0, 1] == pytest.approx(1.0 / 4.0, abs=1e-14)
    direction = np.array([[0.0, 1.0], [-1.0, 0.0]])
    fun = lambda m: sl.pfaffian_signlog(m).log_abs
    assert float(np.sum(g * direction)) == pytest.approx(0.5, abs=1e-12)
    assert fd_directional(fun, a, direction) == pytest.approx(0.5, rel=1e-8)


def test_grad_log_pfaffian_skew_identity():
    eye_s = sl.skew_identity(4)
    g = sl.grad_log_pfaffian(eye_s)
    np.testing.assert_allclose(g, 0.5 * eye_s, atol=1e-15)


def test_grad_log_pfaffian_matches_finite_differences():
    rng = np.random.default_rng(13)
    fun = lambda m: sl.pfaffian_signlog(m).log_abs
    checked = 0
    while checked < 100:
        n = int(rng.integers(1, 5)) * 2
        a = random_skew(n, rng)
        if np.linalg.cond(a) > 1e4:
            continue
        g = sl.grad_log_pfaffian(a)
        assert np.abs(g + g.T).max() == 0.0
        d = random_skew(n, rng)
        ref = fd_directional(fun, a, d)
        assert float(np.sum(g * d)) == pytest.approx(ref, rel=1e-6)
        checked += 1


def test_grad_log_pfaffian_singular_raises():
    with pytest.raises(SingularMatrixError) as exc:
        sl.grad_log_pfaffian(np.zeros((4, 4)))
    assert exc.value.condition_estimate > 1e14 or math.isinf(exc.value.condition_estimate)


# ---------------------------------------------------------------------------
# Cayley parametrizations


def test_cayley_so_zero_raw_is_identity():
    np.testing.assert_allclose(sl.cayley_so(np.zeros((4, 4))), np.eye(4), atol=1e-15)


def test_cayley_so_group_invariants():
    rng = np.random.default_rng(17)
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        t = sl.cayley_so(rng.normal(size=(n, n)))
        assert np.abs(t.T @ t - np.eye(n)).max() < 1e-12
        assert det_via_lu(t) == pytest.approx(1.0, abs=1e-9)


def test_cayley_so_only_skew_part_matters():
    # Adding any symmetric matrix to raw leaves T unchanged.
    rng = np.random.default_rng(19)
    raw = rng.normal(size=(5, 5))
    sym = raw + raw.T
    np.testing.assert_allclose(sl.cayley_so(raw + sym), sl.cayley_so(raw), rtol=0, atol=1e-12)
    np.testing.assert_array_equal(
        sl.cayley_so(raw), sl.cayley_so(0.5 * (raw - raw.T) + np.diag(np.diag(raw)))
    )


def test_cayley_skew_orthogonal_zero_raw():
    np.testing.assert_allclose(
        sl.cayley_skew_orthogonal(np.zeros((6, 6))), sl.skew_identity(6), atol=1e-15
    )


@settings(max_examples=60, deadline=None)
@given(
    n=st.sampled_from([2, 4, 6, 8]),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_cayley_skew_orthogonal_properties(n, seed):
    rng = np.random.default_rng(seed)
    a = sl.cayley_skew_orthogonal(rng.normal(size=(n, n)))
    assert np.array_equal(a, -a.T)
    assert np.abs(a.T @ a - np.eye(n)).max() < 1e-12
    assert sl.pfaffian_signlog(a).log_abs == pytest.approx(0.0, abs=1e-10)


def test_cayley_skew_orthogonal_rejects_odd():
    with pytest.raises(DimensionError):
        sl.cayley_skew_orthogonal(np.zeros((5, 5)))


# ---------------------------------------------------------------------------
# antisymmetrize


def test_antisymmetrize_symmetric_input_is_zero():
    m = np.array([[1.0, 2.0], [2.0, 5.0]])
    np.testing.assert_array_equal(sl.antisymmetrize(m), np.zeros((2, 2)))


def test_antisymmetrize_keeps_skew_input():
    a = sl.skew_identity(4) * 3.0
    np.testing.assert_array_equal(sl.antisymmetrize(a), a)


def test_antisymmetrize_direct_arithmetic():
    m = np.array([[1.0, 2.0], [0.0, 1.0]])
    np.testing.assert_array_equal(sl.antisymmetrize(m), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def test_antisymmetrize_rejects_nonsquare():
    with pytest.raises(DimensionError):
        sl.antisymmetrize(np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# JAX slogpf


def test_slogpf_matches_numpy():
    rng = np.random.default_rng(23)
    for n in (2, 4, 6, 8):
        a = random_skew(n, rng)
        s, l = sl.slogpf(jnp.asarray(a))
        ref = sl.pfaffian_signlog(a)
        assert float(s) == ref.sign
        assert float(l) == pytest.approx(ref.log_abs, abs=1e-12)


def test_slogpf_gradient_matches_analytic():
    rng = np.random.default_rng(29)
    a = random_skew(6, rng)
    grad = jax.grad(lambda m: sl.slogpf(0.5 * (m - m.T))[1])(jnp.asarray(a))
    # The analytic gradient of log|Pf| restricted to skew directions.
    ref = sl.grad_log_pfaffian(a)
    np.testing.assert_allclose(np.asarray(grad), ref, rtol=1e-9, atol=1e-12)


def test_slogpf_second_derivative_finite():
    rng = np.random.default_rng(31)
    a = random_skew(4, rng)
    f = lambda m: sl.slogpf(0.5 * (m - m.T))[1]
    hess = jax.jacfwd(jax.grad(f))(jnp.asarray(a))
    assert np.all(np.isfinite(np.asarray(hess)))
    h = 1e-5
    ap = a.copy()
    ap[0, 1] += h
    ap[1, 0] -= h
    am = a.copy()
    am[0, 1] -= h
    am[1, 0] += h
    gp = jax.grad(f)(jnp.asarray(ap))[0, 1]
    gm = jax.grad(f)(jnp.asarray(am))[0, 1]
    direction = np.zeros((4, 4))
    direction[0, 1] = 1.0
    direction[1, 0] = -1.0
    ref = (float(gp) - float(gm)) / (2 * h)
    got = float(jnp.tensordot(hess[0, 1], jnp.asarray(direction), axes=2))
    assert got == pytest.approx(ref, rel=1e-5)
