"""Gaussian integrals for s and p shells (McMurchie-Davidson scheme).

Overlap, kinetic, nuclear attraction, and electron repulsion over contracted
cartesian Gaussians with l <= 1. Hermite expansion coefficients E and the
Coulomb auxiliary tensor R follow the usual recursions; the Boys function is
evaluated through the confluent hypergeometric function. Everything is
vectorized over primitive pairs, which is plenty at minimal-basis sizes.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import hyp1f1

from .basis import Shell, ao_count

# Cartesian monomial powers per AO of a shell: s -> (0,0,0); p -> x,y,z.
_ANGULAR = {0: [(0, 0, 0)], 1: [(1, 0, 0), (0, 1, 0), (0, 0, 1)]}


def boys(n: int, x: np.ndarray) -> np.ndarray:
    return hyp1f1(n + 0.5, n + 1.5, -x) / (2.0 * n + 1.0)


def _hermite_e(i: int, j: int, t: int, q_x, a, b):
    """Hermite expansion coefficient E_t^{ij} along one dimension; array-valued."""
    p = a + b
    if t < 0 or t > i + j:
        return 0.0
    if i == j == t == 0:
        return np.exp(-(a * b / p) * q_x * q_x)
    if j == 0:
        return (
            _hermite_e(i - 1, j, t - 1, q_x, a, b) / (2.0 * p)
            - (b * q_x / p) * _hermite_e(i - 1, j, t, q_x, a, b)
            + (t + 1) * _hermite_e(i - 1, j, t + 1, q_x, a, b)
        )
    return (
        _hermite_e(i, j - 1, t - 1, q_x, a, b) / (2.0 * p)
        + (a * q_x / p) * _hermite_e(i, j - 1, t, q_x, a, b)
        + (t + 1) * _hermite_e(i, j - 1, t + 1, q_x, a, b)
    )


def _hermite_r(t: int, u: int, v: int, n: int, p, pc, boys_table):
    """Coulomb auxiliary R^n_{tuv}; pc has shape (..., 3)."""
    if t == 0 and u == 0 and v == 0:
        return (-2.0 * p) ** n * boys_table[n]
    if t > 0:
        out = pc[..., 0] * _hermite_r(t - 1, u, v, n + 1, p, pc, boys_table)
        if t > 1:
            out = out + (t - 1) * _hermite_r(t - 2, u, v, n + 1, p, pc, boys_table)
        return out
    if u > 0:
        out = pc[..., 1] * _hermite_r(t, u - 1, v, n + 1, p, pc, boys_table)
        if u > 1:
            out = out + (u - 1) * _hermite_r(t, u - 2, v, n + 1, p, pc, boys_table)
        return out
    out = pc[..., 2] * _hermite_r(t, u, v - 1, n + 1, p, pc, boys_table)
    if v > 1:
        out = out + (v - 1) * _hermite_r(t, u, v - 2, n + 1, p, pc, boys_table)
    return out


class _PrimPair:
    """Primitive-pair data for one pair of contracted AOs, vectorized."""

    def __init__(self, la, lb, exps_a, coefs_a, exps_b, coefs_b, ra, rb):
        a = np.repeat(exps_a, len(exps_b))
        b = np.tile(exps_b, len(exps_a))
        self.a, self.b = a, b
        self.p = a + b
        self.coef = np.repeat(coefs_a, len(coefs_b)) * np.tile(coefs_b, len(coefs_a))
        self.ra, self.rb = ra, rb
        self.ab = ra - rb
        self.center = (a[:, None] * ra[None, :] + b[:, None] * rb[None, :]) / self.p[:, None]
        self.la, self.lb = la, lb

    def e_coef(self, dim: int, i: int, j: int, t: int):
        return _hermite_e(i, j, t, self.ab[dim], self.a, self.b)


def _overlap_prim(pair: _PrimPair, la_xyz, lb_xyz):
    s = (math.pi / pair.p) ** 1.5
    for dim in range(3):
        s = s * pair.e_coef(dim, la_xyz[dim], lb_xyz[dim], 0)
    return s


def _kinetic_prim(pair: _PrimPair, la_xyz, lb_xyz):
    b = pair.b
    lb_sum = sum(lb_xyz)
    term = b * (2 * lb_sum + 3) * _overlap_prim(pair, la_xyz, lb_xyz)
    for dim in range(3):
        shifted = list(lb_xyz)
        shifted[dim] += 2
        term = term - 2.0 * b * b * _overlap_prim(pair, la_xyz, tuple(shifted))
        if lb_xyz[dim] >= 2:
            lowered = list(lb_xyz)
            lowered[dim] -= 2
            term = term - 0.5 * lb_xyz[dim] * (lb_xyz[dim] - 1) * _overlap_prim(
                pair, la_xyz, tuple(lowered)
            )
    return term


def _nuclear_prim(pair: _PrimPair, la_xyz, lb_xyz, centers, charges):
    total = np.zeros_like(pair.p)
    l_tot = sum(la_xyz) + sum(lb_xyz)
    e_per_dim = [
        [pair.e_coef(d, la_xyz[d], lb_xyz[d], t) for t in range(la_xyz[d] + lb_xyz[d] + 1)]
        for d in range(3)
    ]
    for c_idx in range(len(charges)):
        pc = pair.center - centers[c_idx]
        x = pair.p * np.sum(pc * pc, axis=-1)
        boys_table = [boys(n, x) for n in range(l_tot + 1)]
        acc = np.zeros_like(pair.p)
        for t in range(la_xyz[0] + lb_xyz[0] + 1):
            for u in range(la_xyz[1] + lb_xyz[1] + 1):
                for v in range(la_xyz[2] + lb_xyz[2] + 1):
                    acc = acc + (
                        e_per_dim[0][t]
                        * e_per_dim[1][u]
                        * e_per_dim[2][v]
                        * _hermite_r(t, u, v, 0, pair.p, pc, boys_table)
                    )
        total = total - charges[c_idx] * (2.0 * math.pi / pair.p) * acc
    return total


def _ao_list(shells: list[Shell]):
    aos = []
    for sh in shells:
        for lmn in _ANGULAR[sh.l]:
            aos.append((sh, lmn))
    return aos


def _pair(ao_a, ao_b, centers):
    sh_a, la = ao_a
    sh_b, lb = ao_b
    pair = _PrimPair(
        sum(la),
        sum(lb),
        np.asarray(sh_a.exponents),
        np.asarray(sh_a.coefficients),
        np.asarray(sh_b.exponents),
        np.asarray(sh_b.coefficients),
        centers[sh_a.center_index],
        centers[sh_b.center_index],
    )
    return pair, la, lb


def overlap(shells: list[Shell], centers: np.ndarray) -> np.ndarray:
    aos = _ao_list(shells)
    n = len(aos)
    s = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            pair, la, lb = _pair(aos[i], aos[j], centers)
            s[i, j] = s[j, i] = float(np.sum(pair.coef * _overlap_prim(pair, la, lb)))
    return s


def kinetic(shells: list[Shell], centers: np.ndarray) -> np.ndarray:
    aos = _ao_list(shells)
    n = len(aos)
    t = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            pair, la, lb = _pair(aos[i], aos[j], centers)
            t[i, j] = t[j, i] = float(np.sum(pair.coef * _kinetic_prim(pair, la, lb)))
    return t


def nuclear(shells: list[Shell], centers: np.ndarray, charges: np.ndarray) -> np.ndarray:
    aos = _ao_list(shells)
    n = len(aos)
    v = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            pair, la, lb = _pair(aos[i], aos[j], centers)
            v[i, j] = v[j, i] = float(np.sum(pair.coef * _nuclear_prim(pair, la, lb, centers, charges)))
    return v


def eri(shells: list[Shell], centers: np.ndarray) -> np.ndarray:
    """Full (ij|kl) tensor with 8-fold symmetry; fine at minimal-basis sizes."""
    aos = _ao_list(shells)
    n = len(aos)
    out = np.zeros((n, n, n, n))
    pair_cache = {}

    def get_pair(i, j):
        if (i, j) not in pair_cache:
            pair_cache[(i, j)] = _pair(aos[i], aos[j], centers)
        return pair_cache[(i, j)]

    for i in range(n):
        for j in range(i + 1):
            pair_ab, la, lb = get_pair(i, j)
            e_ab = [
                [pair_ab.e_coef(d, la[d], lb[d], t) for t in range(la[d] + lb[d] + 1)]
                for d in range(3)
            ]
            for k in range(i + 1):
                l_max = k if k < i else j
                for l in range(l_max + 1):
                    pair_cd, lc, ld = get_pair(k, l)
                    e_cd = [
                        [pair_cd.e_coef(d, lc[d], ld[d], t) for t in range(lc[d] + ld[d] + 1)]
                        for d in range(3)
                    ]
                    val = _eri_contracted(pair_ab, la, lb, e_ab, pair_cd, lc, ld, e_cd)
                    for a_, b_, c_, d_ in (
                        (i, j, k, l), (j, i, k, l), (i, j, l, k), (j, i, l, k),
                        (k, l, i, j), (l, k, i, j), (k, l, j, i), (l, k, j, i),
                    ):
                        out[a_, b_, c_, d_] = val
    return out


def _eri_contracted(pair_ab, la, lb, e_ab, pair_cd, lc, ld, e_cd) -> float:
    p = pair_ab.p[:, None]
    q = pair_cd.p[None, :]
    rho = p * q / (p + q)
    pq = pair_ab.center[:, None, :] - pair_cd.center[None, :, :]
    x = (rho * np.sum(pq * pq, axis=-1))
    l_tot = sum(la) + sum(lb) + sum(lc) + sum(ld)
    boys_table = [boys(n, x) for n in range(l_tot + 1)]
    pref = 2.0 * math.pi**2.5 / (p * q * np.sqrt(p + q))

    acc = np.zeros_like(x)
    for t in range(la[0] + lb[0] + 1):
        for u in range(la[1] + lb[1] + 1):
            for v in range(la[2] + lb[2] + 1):
                e_abw = e_ab[0][t] * e_ab[1][u] * e_ab[2][v]
                for tt in range(lc[0] + ld[0] + 1):
                    for uu in range(lc[1] + ld[1] + 1):
                        for vv in range(lc[2] + ld[2] + 1):
                            e_cdw = e_cd[0][tt] * e_cd[1][uu] * e_cd[2][vv]
                            sign = (-1.0) ** (tt + uu + vv)
                            r_val = _hermite_r(t + tt, u + uu, v + vv, 0, rho, pq, boys_table)
                            acc = acc + sign * np.outer(e_abw, np.atleast_1d(e_cdw)) * r_val
    weights = np.outer(pair_ab.coef, pair_cd.coef)
    return float(np.sum(weights * pref * acc))


def eval_ao(shells: list[Shell], centers: np.ndarray, points: np.ndarray) -> np.ndarray:
    """AO values at points, shape (n_points, n_ao); AO order matches the matrices."""
    points = np.atleast_2d(points)
    cols = []
    for sh in shells:
        d = points - centers[sh.center_index]
        r2 = np.sum(d * d, axis=-1)
        radial = np.zeros(len(points))
        for alpha, coef in zip(sh.exponents, sh.coefficients):
            radial = radial + coef * np.exp(-alpha * r2)
        if sh.l == 0:
            cols.append(radial)
        else:
            for dim in range(3):
                cols.append(d[:, dim] * radial)
    return np.stack(cols, axis=-1)
