"""Integral tests against closed-form Gaussian results derived independently.

The oracles here use the Gaussian product theorem and separable 1D moment
formulas, plus the erf form of the Boys function, so none of the recursion
code under test appears in the expected values.
"""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from hfref.basis import Shell, build_shells, primitive_norm, shells_for
from hfref.integrals import boys, eri, eval_ao, kinetic, nuclear, overlap


def norm_s(alpha):
    return (2.0 * alpha / math.pi) ** 0.75


def norm_p(alpha):
    return norm_s(alpha) * 2.0 * math.sqrt(alpha)


def prim_shell(center_index, l, alpha):
    """Single normalized primitive as a Shell."""
    n = norm_s(alpha) if l == 0 else norm_p(alpha)
    return Shell(center_index, l, (alpha,), (n,))


def overlap_1d(i, j, pa, pb, p):
    """1D Cartesian overlap polynomial factor for quanta up to 1."""
    if (i, j) == (0, 0):
        return 1.0
    if (i, j) == (1, 0):
        return pa
    if (i, j) == (0, 1):
        return pb
    if (i, j) == (1, 1):
        return pa * pb + 1.0 / (2.0 * p)
    raise ValueError((i, j))


def overlap_oracle(la_xyz, lb_xyz, alpha, beta, ra, rb):
    """Primitive overlap from the Gaussian product theorem, normalized."""
    p = alpha + beta
    q = alpha * beta / p
    center = (alpha * ra + beta * rb) / p
    ab = ra - rb
    val = norm_by_l(la_xyz, alpha) * norm_by_l(lb_xyz, beta)
    for d in range(3):
        val *= math.sqrt(math.pi / p) * math.exp(-q * ab[d] ** 2)
        val *= overlap_1d(la_xyz[d], lb_xyz[d], center[d] - ra[d], center[d] - rb[d], p)
    return val


def norm_by_l(l_xyz, alpha):
    return norm_p(alpha) if sum(l_xyz) == 1 else norm_s(alpha)


def boys0_erf(x):
    if x < 1e-14:
        return 1.0 - x / 3.0
    return 0.5 * math.sqrt(math.pi / x) * math.erf(math.sqrt(x))


RA = np.array([0.1, -0.2, 0.3])
RB = np.array([0.6, 0.5, -0.8])
ALPHA, BETA = 0.8, 1.3


def two_atom_sp_shells():
    return [
        prim_shell(0, 0, ALPHA),
        prim_shell(0, 1, ALPHA),
        prim_shell(1, 0, BETA),
        prim_shell(1, 1, BETA),
    ]


AO_ANGULAR = [
    (0, (0, 0, 0), ALPHA, 0),
    (0, (1, 0, 0), ALPHA, 1),
    (0, (0, 1, 0), ALPHA, 1),
    (0, (0, 0, 1), ALPHA, 1),
    (1, (0, 0, 0), BETA, 0),
    (1, (1, 0, 0), BETA, 1),
    (1, (0, 1, 0), BETA, 1),
    (1, (0, 0, 1), BETA, 1),
]


def test_overlap_all_sp_pairs_match_product_theorem():
    centers = np.stack([RA, RB])
    s = overlap(two_atom_sp_shells(), centers)
    assert s.shape == (8, 8)
    for i, (ci, li, ai, _) in enumerate(AO_ANGULAR):
        for j, (cj, lj, aj, _) in enumerate(AO_ANGULAR):
            expected = overlap_oracle(li, lj, ai, aj, centers[ci], centers[cj])
            assert s[i, j] == pytest.approx(expected, abs=1e-13), (i, j)


def test_kinetic_ss_closed_form():
    centers = np.stack([RA, RB])
    shells = [prim_shell(0, 0, ALPHA), prim_shell(1, 0, BETA)]
    t = kinetic(shells, centers)
    p = ALPHA + BETA
    q = ALPHA * BETA / p
    r2 = float(np.sum((RA - RB) ** 2))
    expected = (
        q * (3.0 - 2.0 * q * r2) * (math.pi / p) ** 1.5 * math.exp(-q * r2)
        * norm_s(ALPHA) * norm_s(BETA)
    )
    assert t[0, 1] == pytest.approx(expected, rel=1e-12)


def test_kinetic_normalized_diagonal():
    # <T> of a normalized Gaussian with L angular quanta is alpha (2L + 3) / 2
    centers = np.zeros((1, 3))
    shells = [prim_shell(0, 0, 0.9), prim_shell(0, 1, 0.9)]
    t = kinetic(shells, centers)
    assert t[0, 0] == pytest.approx(1.5 * 0.9, rel=1e-12)
    for k in (1, 2, 3):
        assert t[k, k] == pytest.approx(2.5 * 0.9, rel=1e-12)


def test_nuclear_on_center_closed_form():
    # <1/r> of a normalized s Gaussian about its own center is 2 sqrt(2 alpha / pi)
    alpha = 1.7
    centers = np.zeros((1, 3))
    v = nuclear([prim_shell(0, 0, alpha)], centers, np.array([1.0]))
    assert v[0, 0] == pytest.approx(-2.0 * math.sqrt(2.0 * alpha / math.pi), rel=1e-12)


def test_nuclear_off_center_erf_form():
    # attraction of an s distribution to a nucleus a distance d away:
    # -Z (2 pi / p) F0(p d^2) N^2 with p = 2 alpha, F0 in erf form
    alpha, d, z = 1.1, 1.9, 3.0
    # shell on the first center, the only charge on the second
    centers = np.array([[0.0, d, 0.0], [0.0, 0.0, 0.0]])
    v = nuclear([prim_shell(0, 0, alpha)], centers, np.array([0.0, z]))
    p = 2.0 * alpha
    expected = -z * (2.0 * math.pi / p) * boys0_erf(p * d * d) * norm_s(alpha) ** 2
    assert v[0, 0] == pytest.approx(expected, rel=1e-12)


def test_boys_against_erf_and_recursion():
    for x in (0.0, 1e-8, 0.1, 1.0, 5.0, 20.0):
        assert float(boys(0, np.array(x))) == pytest.approx(boys0_erf(x), rel=1e-10)
    for n in range(4):
        assert float(boys(n, np.array(0.0))) == pytest.approx(1.0 / (2 * n + 1), rel=1e-12)
    # upward recursion F_{n+1} = ((2n+1) F_n - exp(-x)) / (2x)
    for x in (0.3, 2.0, 9.0):
        for n in range(3):
            fn = float(boys(n, np.array(x)))
            fn1 = float(boys(n + 1, np.array(x)))
            assert fn1 == pytest.approx(((2 * n + 1) * fn - math.exp(-x)) / (2 * x), rel=1e-9)


def test_eri_same_center_self_repulsion():
    # (aa|aa) of a normalized s primitive equals 2 sqrt(alpha / pi): the Coulomb
    # self-energy of the normalized Gaussian charge distribution exp(-2 alpha r^2)
    alpha = 0.75
    centers = np.zeros((1, 3))
    g = eri([prim_shell(0, 0, alpha)], centers)
    assert g[0, 0, 0, 0] == pytest.approx(2.0 * math.sqrt(alpha / math.pi), rel=1e-12)


def test_eri_two_center_erf_form():
    # (aa|bb) is the Coulomb energy of two normalized Gaussian charge clouds:
    # erf(sqrt(2 alpha beta / (alpha + beta)) d) / d
    alpha, beta, d = 0.9, 1.4, 2.3
    centers = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, d]])
    g = eri([prim_shell(0, 0, alpha), prim_shell(1, 0, beta)], centers)
    gamma = math.sqrt(2.0 * alpha * beta / (alpha + beta))
    assert g[0, 0, 1, 1] == pytest.approx(math.erf(gamma * d) / d, rel=1e-12)


def test_eri_eightfold_symmetry_values():
    # independently computed quartets must agree through all index symmetries
    shells = shells_for(3, 0)  # Li: s, s, p -> 5 AOs
    centers = np.zeros((1, 3))
    g = eri(shells, centers)
    rng = np.random.default_rng(7)
    for _ in range(40):
        i, j, k, l = rng.integers(0, 5, size=4)
        v = g[i, j, k, l]
        for a, b, c, d in ((j, i, k, l), (i, j, l, k), (k, l, i, j), (l, k, j, i)):
            assert g[a, b, c, d] == pytest.approx(v, abs=1e-14)


def test_contracted_overlap_matches_radial_quadrature():
    shells = shells_for(1, 0)  # H 1s, contracted
    centers = np.zeros((1, 3))
    s = overlap(shells, centers)

    def radial(r):
        sh = shells[0]
        val = sum(c * math.exp(-a * r * r) for a, c in zip(sh.exponents, sh.coefficients))
        return val * val * r * r

    integral, err = quad(radial, 0.0, 40.0, limit=200)
    assert err < 1e-9
    assert s[0, 0] == pytest.approx(4.0 * math.pi * integral, rel=1e-8)
    # the contracted 1s is normalized up to the Slater fit residual
    assert abs(s[0, 0] - 1.0) < 1e-5


def test_contracted_shells_near_normalized():
    for z in (1, 2, 3, 6, 10):
        shells = build_shells([z])
        s = overlap(shells, np.zeros((1, 3)))
        assert np.allclose(np.diag(s), 1.0, atol=1e-5)


def test_eval_ao_matches_contraction():
    shells = build_shells([3, 1])  # LiH: s,s,p + s
    centers = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]])
    rng = np.random.default_rng(3)
    points = rng.normal(scale=1.5, size=(6, 3))
    ao = eval_ao(shells, centers, points)
    assert ao.shape == (6, 6)
    col = 0
    for sh in shells:
        d = points - centers[sh.center_index]
        radial = sum(c * np.exp(-a * np.sum(d * d, axis=-1)) for a, c in zip(sh.exponents, sh.coefficients))
        if sh.l == 0:
            np.testing.assert_allclose(ao[:, col], radial, rtol=1e-13)
            col += 1
        else:
            for dim in range(3):
                np.testing.assert_allclose(ao[:, col], d[:, dim] * radial, rtol=1e-13)
                col += 1


def test_eval_ao_p_orientation():
    # p columns follow x, y, z order: along +x only p_x is nonzero
    shells = [prim_shell(0, 1, 1.0)]
    centers = np.zeros((1, 3))
    ao = eval_ao(shells, centers, np.array([[0.7, 0.0, 0.0]]))
    assert ao[0, 0] > 0.0
    assert ao[0, 1] == 0.0 and ao[0, 2] == 0.0
