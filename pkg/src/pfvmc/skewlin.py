"""Numerically stable skew-symmetric linear algebra.

Pfaffian values in sign/log form, Pfaffian gradients, and Cayley-transform
parametrizations of SO(n) and of the skew-orthogonal matrices. The NumPy
functions are the reference implementations used by tests and benchmarks;
``slogpf`` is the JAX counterpart with a custom derivative rule so the wave
function can be differentiated through the Pfaffian.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from scipy.linalg.lapack import dgehrd

from .errors import (
    ConditioningError,
    DimensionError,
    InvalidInputError,
    SingularMatrixError,
)

# Below this magnitude a tridiagonal entry is treated as an exact zero of the
# Pfaffian; the log would underflow float64 anyway.
_UNDERFLOW = 1e-300


class SignLogValue(NamedTuple):
    """A real number stored as sign in {-1, 0, +1} and log of absolute value."""

    sign: float
    log_abs: float

    @property
    def value(self) -> float:
        return self.sign * math.exp(self.log_abs)


def skew_identity(n: int) -> np.ndarray:
    """Block-diagonal [[0, 1], [-1, 0]] matrix of even size n; Pf = +1."""
    if n % 2 != 0:
        raise DimensionError(f"skew identity needs even size, got {n}")
    eye = np.eye(n // 2)
    block = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return np.kron(eye, block)


def _check_square(a: np.ndarray, op: str) -> int:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{op} needs a square matrix, got shape {a.shape}")
    return a.shape[0]


def pfaffian_signlog(a: np.ndarray) -> SignLogValue:
    """Sign and log|Pf| of an even-dimensional skew-symmetric matrix.

    Householder tridiagonalization via the blocked LAPACK Hessenberg
    reduction (orthogonal congruence preserves skewness, so the Hessenberg
    form is tridiagonal).  The Pfaffian of the tridiagonal form is the
    product of every other super-diagonal entry, and each nontrivial
    reflector contributes a factor det(H) = -1 to the sign.
    """
    a = np.asarray(a, dtype=np.float64)
    n = _check_square(a, "pfaffian_signlog")
    if n % 2 != 0:
        raise DimensionError(f"Pfaffian needs even dimension, got {n}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("pfaffian_signlog: matrix contains NaN/Inf")
    if n == 0:
        return SignLogValue(1.0, 0.0)

    ht, tau, info = dgehrd(a)
    if info != 0:
        raise ConditioningError(f"Hessenberg reduction failed with info={info}")
    sign_q = -1.0 if np.count_nonzero(tau) % 2 else 1.0

    t = np.diagonal(ht, offset=1)[::2]
    if np.any(np.abs(t) < _UNDERFLOW):
        return SignLogValue(0.0, -math.inf)
    sign = sign_q * float(np.prod(np.sign(t)))
    # Tridiagonal super-diagonal t sits at (k, k+1) while Pf counts (2i, 2i+1)
    # entries of the upper triangle, so Pf(T) = product of t[0], t[2], ...
    log_abs = float(np.sum(np.log(np.abs(t))))
    return SignLogValue(sign, log_abs)


def pfaffian(a: np.ndarray) -> float:
    """Pfaffian as a plain float; overflows for large log magnitudes."""
    s, l = pfaffian_signlog(a)
    return s * math.exp(l) if s != 0.0 else 0.0


def grad_log_pfaffian(a: np.ndarray) -> np.ndarray:
    """d log|Pf(a)| / d a = -1/2 a^{-1}, returned exactly skew-symmetric."""
    a = np.asarray(a, dtype=np.float64)
    n = _check_square(a, "grad_log_pfaffian")
    if n % 2 != 0:
        raise DimensionError(f"grad_log_pfaffian needs even dimension, got {n}")
    cond = float(np.linalg.cond(a))
    if not math.isfinite(cond) or cond > 1e14:
        raise SingularMatrixError(
            f"grad_log_pfaffian: matrix numerically singular (cond ~ {cond:.3e})",
            condition_estimate=cond,
        )
    g = -0.5 * np.linalg.inv(a)
    return 0.5 * (g - g.T)


def antisymmetrize(m: np.ndarray) -> np.ndarray:
    """(m - m^T) / 2."""
    m = np.asarray(m, dtype=np.float64)
    _check_square(m, "antisymmetrize")
    return 0.5 * (m - m.T)


def cayley_so(raw: np.ndarray) -> np.ndarray:
    """Map an unconstrained square matrix onto SO(n).

    T_hat = (raw - raw^T)/2 is skew, so (T_hat - I) is always invertible;
    T_bar = (T_hat - I)^{-1} (T_hat + I) is orthogonal with det -1 ... +1
    depending on n, and T = T_bar T_bar lands in SO(n) for every n.
    """
    raw = np.asarray(raw, dtype=np.float64)
    n = _check_square(raw, "cayley_so")
    t_hat = 0.5 * (raw - raw.T)
    lhs = t_hat - np.eye(n)
    t_bar = np.linalg.solve(lhs, t_hat + np.eye(n))
    residual = np.linalg.norm(lhs @ t_bar - (t_hat + np.eye(n)))
    scale = max(1.0, np.linalg.norm(t_hat + np.eye(n)))
    if not np.all(np.isfinite(t_bar)) or residual / scale > 1e-8:
        raise ConditioningError(
            f"cayley_so: solve residual {residual:.3e} too large; jitter the raw parameter and retry"
        )
    return t_bar @ t_bar


def cayley_skew_orthogonal(raw: np.ndarray) -> np.ndarray:
    """Map an unconstrained even-size matrix onto the skew-orthogonal matrices.

    A = T I_skew T^T with T in SO(n) is skew with A^T A = I and |Pf(A)| = 1.
    """
    raw = np.asarray(raw, dtype=np.float64)
    n = _check_square(raw, "cayley_skew_orthogonal")
    if n % 2 != 0:
        raise DimensionError(f"cayley_skew_orthogonal needs even dimension, got {n}")
    t = cayley_so(raw)
    a = t @ skew_identity(n) @ t.T
    return 0.5 * (a - a.T)


# ---------------------------------------------------------------------------
# JAX counterpart used inside the wave function.


def _slogpf_primal(a: jnp.ndarray) -> tuple[jnp.ndarray, jnp.ndarray]:
    """Traceable Householder tridiagonalization; shapes are static."""
    n = a.shape[-1]
    if n % 2 != 0:
        raise DimensionError(f"slogpf needs even dimension, got {n}")
    if n == 0:
        return jnp.asarray(1.0), jnp.asarray(0.0)
    b = a
    sign_q = jnp.asarray(1.0)
    for k in range(n - 2):
        x = b[k + 1 :, k]
        tail2 = jnp.sum(x[1:] ** 2)
        active = tail2 > 0.0
        norm_x = jnp.sqrt(x[0] ** 2 + tail2)
        alpha = jnp.where(x[0] >= 0, -norm_x, norm_x)
        v = x.at[0].add(-alpha)
        vv = jnp.sum(v**2)
        tau = jnp.where(active, 2.0 / jnp.where(vv > 0, vv, 1.0), 0.0)
        sign_q = jnp.where(active, -sign_q, sign_q)

        blk = b[k + 1 :, k + 1 :]
        u = blk @ v
        blk = blk + tau * (jnp.outer(v, u) - jnp.outer(u, v))
        col = jnp.where(active, jnp.zeros_like(x).at[0].set(alpha), x)
        b = b.at[k + 1 :, k + 1 :].set(blk)
        b = b.at[k + 1 :, k].set(col)
        b = b.at[k, k + 1 :].set(-col)

    t = jnp.diagonal(b, offset=1)[::2]
    sign = sign_q * jnp.prod(jnp.sign(t))
    log_abs = jnp.sum(jnp.log(jnp.abs(t)))
    return sign, log_abs


@jax.custom_jvp
def slogpf(a: jnp.ndarray) -> tuple[jnp.ndarray, jnp.ndarray]:
    """(sign, log|Pf|) of a skew-symmetric matrix, differentiable in log part."""
    return _slogpf_primal(a)


@slogpf.defjvp
def _slogpf_jvp(primals, tangents):
    (a,) = primals
    (a_dot,) = tangents
    sign, log_abs = slogpf(a)
    # d log|Pf(A)| = 1/2 tr(A^{-1} dA); the sign is locally constant.
    log_dot = 0.5 * jnp.trace(jnp.linalg.solve(a, a_dot))
    return (sign, log_abs), (jnp.zeros_like(sign), log_dot)


def slogdet_np(m: np.ndarray) -> SignLogValue:
    """Sign/log determinant via LU with partial pivoting (NumPy reference)."""
    m = np.asarray(m, dtype=np.float64)
    _check_square(m, "slogdet_np")
    sign, log_abs = np.linalg.slogdet(m)
    if sign == 0.0:
        return SignLogValue(0.0, -math.inf)
    return SignLogValue(float(sign), float(log_abs))
