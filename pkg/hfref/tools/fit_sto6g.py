"""Generate the six-Gaussian expansions behind basis.py.

Least-squares fit of six Gaussian primitives to zeta=1 Slater radial
functions: one fit for 1s, and one joint fit for 2s/2p sharing a common
exponent set. Minimizes the L2 residual of normalized radial functions
under the r^2 dr measure, which is equivalent to maximizing the overlap
with the target Slater function. Run manually; the resulting constants
are frozen as literals in src/hfref/basis.py.

Usage: python3 tools/fit_sto6g.py
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize

SQRT_PI = math.sqrt(math.pi)


def gauss_norm_s(alpha: float) -> float:
    # normalize exp(-a r^2) under r^2 dr
    return (SQRT_PI / 4.0 * (2.0 * alpha) ** -1.5) ** -0.5


def gauss_norm_p(alpha: float) -> float:
    # normalize r exp(-a r^2) under r^2 dr
    return (3.0 / 8.0 * SQRT_PI * (2.0 * alpha) ** -2.5) ** -0.5


def gram_s(alphas: np.ndarray) -> np.ndarray:
    n = gauss_norm_s(alphas)
    ab = alphas[:, None] + alphas[None, :]
    return np.outer(n, n) * SQRT_PI / 4.0 * ab**-1.5


def gram_p(alphas: np.ndarray) -> np.ndarray:
    n = gauss_norm_p(alphas)
    ab = alphas[:, None] + alphas[None, :]
    return np.outer(n, n) * 3.0 / 8.0 * SQRT_PI * ab**-2.5


def cross_s(alphas: np.ndarray, sto_radial) -> np.ndarray:
    out = np.empty(len(alphas))
    for i, a in enumerate(alphas):
        na = gauss_norm_s(a)
        out[i] = quad(lambda r: sto_radial(r) * na * np.exp(-a * r * r) * r * r, 0, 40)[0]
    return out


def cross_p(alphas: np.ndarray, sto_radial) -> np.ndarray:
    out = np.empty(len(alphas))
    for i, a in enumerate(alphas):
        na = gauss_norm_p(a)
        out[i] = quad(lambda r: sto_radial(r) * na * r * np.exp(-a * r * r) * r * r, 0, 40)[0]
    return out


def sto_1s(r):
    return 2.0 * np.exp(-r)


def sto_2sp(r):
    # 2s and 2p share the radial form r exp(-r) at zeta=1
    return math.sqrt(4.0 / 3.0) * r * np.exp(-r)


def fit_error_1s(log_alphas: np.ndarray) -> float:
    alphas = np.exp(log_alphas)
    g = gram_s(alphas)
    b = cross_s(alphas, sto_1s)
    d = np.linalg.solve(g, b)
    return 1.0 - b @ d


def fit_error_2sp(log_alphas: np.ndarray) -> float:
    alphas = np.exp(log_alphas)
    gs, gp = gram_s(alphas), gram_p(alphas)
    bs = cross_s(alphas, sto_2sp)
    bp = cross_p(alphas, sto_2sp)
    return (1.0 - bs @ np.linalg.solve(gs, bs)) + (1.0 - bp @ np.linalg.solve(gp, bp))


def refine(error_fn, inits: list[np.ndarray]):
    best = None
    for x0 in inits:
        res = minimize(error_fn, np.log(x0), method="Nelder-Mead",
                       options={"maxiter": 6000, "xatol": 1e-12, "fatol": 1e-15})
        if best is None or res.fun < best.fun:
            best = res
    return np.sort(np.exp(best.x))[::-1], best.fun


def main():
    geometric = [np.array([0.06 * 3.2**k for k in range(6)]),
                 np.array([0.1 * 2.5**k for k in range(6)]),
                 np.array([0.08 * 3.0**k for k in range(6)])]

    a1s, err1s = refine(fit_error_1s, geometric)
    d1s = np.linalg.solve(gram_s(a1s), cross_s(a1s, sto_1s))
    print(f"# 1s fit residual {err1s:.3e}")
    print("EXP_1S =", [f"{a:.10g}" for a in a1s])
    print("COEF_1S =", [f"{c:.10g}" for c in d1s])

    a2, err2 = refine(fit_error_2sp, [g * 0.5 for g in geometric])
    d2s = np.linalg.solve(gram_s(a2), cross_s(a2, sto_2sp))
    d2p = np.linalg.solve(gram_p(a2), cross_p(a2, sto_2sp))
    print(f"# 2sp fit residual {err2:.3e}")
    print("EXP_2SP =", [f"{a:.10g}" for a in a2])
    print("COEF_2S =", [f"{c:.10g}" for c in d2s])
    print("COEF_2P =", [f"{c:.10g}" for c in d2p])


if __name__ == "__main__":
    main()
