"""Exact derivatives of log|Psi|: coordinate gradient, Laplacian, parameter rows.

A log-psi field is any callable r -> SignLogValue (extra arguments are bound
by the caller).  The Laplacian is the trace of the coordinate Hessian of
log|Psi|, computed by forward differentiation of the reverse-mode gradient;
parameter Jacobians are per-walker reverse-mode gradients flattened in a
canonical order (depth-first over sorted dict keys, the ravel order of
jax.flatten_util.ravel_pytree).
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from .errors import InvalidInputError, NodalSurfaceError, NumericInstabilityError
from .skewlin import SignLogValue


class CoordinateDerivatives(NamedTuple):
    value: SignLogValue
    grad: jnp.ndarray  # (n_elec, 3), d log|Psi| / d r
    laplacian: jnp.ndarray  # scalar, sum of second derivatives


def _log_abs_fn(f: Callable) -> Callable:
    def fn(r):
        out = f(r)
        return out.log_abs if isinstance(out, SignLogValue) else out[1]

    return fn


def grad_and_laplacian(f: Callable, r: jnp.ndarray):
    """Gradient and Laplacian of a scalar log-field; jit-compatible core."""
    shape = r.shape
    flat = r.reshape(-1)
    fn = lambda x: _log_abs_fn(f)(x.reshape(shape))
    grad_fn = jax.grad(fn)
    grad = grad_fn(flat)

    basis = jnp.eye(flat.size, dtype=flat.dtype)
    diag = jax.vmap(lambda e: jax.jvp(grad_fn, (flat,), (e,))[1] @ e)(basis)
    return grad.reshape(shape), jnp.sum(diag)


def eval_with_laplacian(f: Callable, r: jnp.ndarray) -> CoordinateDerivatives:
    """Value, gradient, and Laplacian of log|Psi| at one configuration."""
    value = f(r)
    if not isinstance(value, SignLogValue):
        value = SignLogValue(value[0], value[1])
    grad, lap = grad_and_laplacian(f, r)
    if not isinstance(lap, jax.core.Tracer):
        bad = np.argwhere(~np.isfinite(np.asarray(grad)))
        if bad.size:
            i, k = bad[0]
            raise NumericInstabilityError(f"non-finite gradient at electron {i} coordinate {k}")
        if not np.isfinite(float(lap)):
            raise NumericInstabilityError("non-finite laplacian")
    return CoordinateDerivatives(value, grad, lap)


def eval_param_jacobian(f: Callable, walkers: jnp.ndarray, params) -> jnp.ndarray:
    """Rows d log|Psi(x_i)| / d theta, canonically flattened; (n_walkers, P).

    f is called as f(r, params) and must return a SignLogValue.  Walkers on
    the nodal surface (sign 0) are rejected with the offending index.
    """

    def log_abs(r, p):
        out = f(r, p)
        return out.log_abs if isinstance(out, SignLogValue) else out[1]

    def row(r):
        g = jax.grad(lambda p: log_abs(r, p))(params)
        return ravel_pytree(g)[0]

    rows = jax.vmap(row)(walkers)
    if not isinstance(rows, jax.core.Tracer):
        signs = np.asarray([float(_sign_of(f(w, params))) for w in walkers])
        zeros = np.argwhere(signs == 0)
        if zeros.size:
            raise NodalSurfaceError(f"walker {int(zeros[0][0])} sits on the nodal surface")
    return rows


def _sign_of(out) -> float:
    return out.sign if isinstance(out, SignLogValue) else out[0]


def fd_check(f: Callable, r: jnp.ndarray, h: float, param_fn=None, params=None, n_params: int = 0, key=None) -> dict:
    """Max relative error of grad/laplacian (and optional parameter columns)
    against central finite differences with step h."""
    if h <= 0:
        raise InvalidInputError(f"finite-difference step must be positive, got {h}")
    fn = _log_abs_fn(f)
    r = np.asarray(r, dtype=np.float64)
    shape = r.shape
    flat = r.reshape(-1)

    f0 = float(fn(jnp.asarray(r)))
    fd_grad = np.zeros(flat.size)
    fd_diag = np.zeros(flat.size)
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(fn(jnp.asarray(xp.reshape(shape))))
        fm = float(fn(jnp.asarray(xm.reshape(shape))))
        fd_grad[i] = (fp - fm) / (2 * h)
        fd_diag[i] = (fp + fm - 2 * f0) / h**2

    deriv = eval_with_laplacian(f, jnp.asarray(r))
    grad = np.asarray(deriv.grad).reshape(-1)
    rel = lambda a, b: abs(a - b) / max(abs(b), 1e-10)
    report = {
        "grad_rel": max(rel(a, b) for a, b in zip(grad, fd_grad)) if np.max(np.abs(fd_grad)) > 1e-8
        else float(np.max(np.abs(grad - fd_grad))),
        "laplacian_rel": rel(float(deriv.laplacian), float(np.sum(fd_diag))),
    }

    if param_fn is not None and params is not None and n_params > 0:
        flat_p, unravel = ravel_pytree(params)
        flat_p = np.asarray(flat_p)
        rng = np.random.default_rng(0 if key is None else key)
        picks = rng.choice(flat_p.size, size=min(n_params, flat_p.size), replace=False)
        rows = eval_param_jacobian(param_fn, jnp.asarray(r)[None], params)
        ad_cols = np.asarray(rows[0])

        def log_at(p_flat):
            out = param_fn(jnp.asarray(r), unravel(jnp.asarray(p_flat)))
            return float(out.log_abs if isinstance(out, SignLogValue) else out[1])

        worst = 0.0
        for i in picks:
            pp, pm = flat_p.copy(), flat_p.copy()
            pp[i] += h
            pm[i] -= h
            fd = (log_at(pp) - log_at(pm)) / (2 * h)
            worst = max(worst, rel(ad_cols[i], fd) if abs(fd) > 1e-8 else abs(ad_cols[i] - fd))
        report["param_rel"] = worst
    return report


def fd_check_many(f: Callable, points: jnp.ndarray, h: float) -> dict:
    """fd_check over a batch of configurations with one compilation.

    Returns the worst grad/laplacian relative errors over all points; suited
    to validation sweeps where per-point eager tracing would dominate.
    """
    if h <= 0:
        raise InvalidInputError(f"finite-difference step must be positive, got {h}")
    fn_val = jax.jit(_log_abs_fn(f))
    fn_der = jax.jit(lambda x: grad_and_laplacian(f, x))

    worst_g, worst_l = 0.0, 0.0
    rel = lambda a, b: abs(a - b) / max(abs(b), 1e-10)
    for r in np.asarray(points, dtype=np.float64):
        flat = r.reshape(-1)
        f0 = float(fn_val(jnp.asarray(r)))
        fd_grad = np.zeros(flat.size)
        lap_fd = 0.0
        for i in range(flat.size):
            xp, xm = flat.copy(), flat.copy()
            xp[i] += h
            xm[i] -= h
            fp = float(fn_val(jnp.asarray(xp.reshape(r.shape))))
            fm = float(fn_val(jnp.asarray(xm.reshape(r.shape))))
            fd_grad[i] = (fp - fm) / (2 * h)
            lap_fd += (fp + fm - 2 * f0) / h**2
        grad, lap = fn_der(jnp.asarray(r))
        ad = np.asarray(grad).reshape(-1)
        scale = max(float(np.max(np.abs(fd_grad))), 1e-10)
        worst_g = max(worst_g, float(np.max(np.abs(ad - fd_grad))) / scale)
        worst_l = max(worst_l, rel(float(lap), lap_fd))
    return {"grad_rel": worst_g, "laplacian_rel": worst_l}
