"""Metropolis-Hastings sampling of electron configurations from Psi^2.

All-electron isotropic Gaussian proposals with a width adapted after every
sweep toward a mid-range acceptance rate.  Randomness is counter-based: each
sweep derives one key from (base key, sweep counter) and each walker folds its
index into that key, so results do not depend on how walkers are partitioned
across workers.  Spin labels are implicit: the first n_up electron rows of
every walker are spin-up.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp

from .errors import InvalidInputError
from .skewlin import SignLogValue
from .system import MolecularStructure

WIDTH_MIN, WIDTH_MAX = 0.02, 2.0
WIDTH_FACTOR = 1.05
ACC_HIGH, ACC_LOW = 0.55, 0.45
BURN_IN_SWEEPS = 200


class WalkerSet(NamedTuple):
    positions: jnp.ndarray  # (n_walkers, n_elec, 3), bohr
    sign: jnp.ndarray  # (n_walkers,) cached wave function signs
    log_abs: jnp.ndarray  # (n_walkers,) cached log|Psi|
    width: jnp.ndarray  # scalar proposal width, bohr
    base_key: jnp.ndarray  # PRNG key, fixed over the walker set's lifetime
    counter: jnp.ndarray  # int32 sweep counter


def _as_pair(out):
    if isinstance(out, SignLogValue):
        return out.sign, out.log_abs
    return out[0], out[1]


def _interleave_order(n_up: int, n_down: int) -> tuple[int, ...]:
    """seat index for each electron: up/down pairs alternate, surplus ups last."""
    seat = [0] * (n_up + n_down)
    for i in range(n_down):
        seat[i] = 2 * i
        seat[n_up + i] = 2 * i + 1
    for i in range(n_down, n_up):
        seat[i] = n_down + i
    return tuple(seat)


def init_walkers(
    structure: MolecularStructure, n_walkers: int, seed: int, f: Callable | None = None
) -> WalkerSet:
    """Gaussian clouds (width 1 bohr) around nuclei drawn proportional to Z,
    spins dealt alternately per nucleus; deterministic given the seed."""
    if n_walkers < 1:
        raise InvalidInputError(f"need at least one walker, got {n_walkers}")
    n_e = structure.n_elec
    key = jax.random.PRNGKey(seed)
    k_nuc, k_pos, k_base = jax.random.split(key, 3)

    logits = jnp.log(jnp.asarray(structure.charges, dtype=jnp.float64))
    assign = jax.random.categorical(k_nuc, logits, shape=(n_walkers, n_e))
    seats = jnp.argsort(assign, axis=1)  # stable: seats grouped by nucleus
    seat_of = jnp.asarray(_interleave_order(structure.n_up, structure.n_down))
    nuc_of_elec = jnp.take_along_axis(assign, seats[:, seat_of], axis=1)  # (n_w, n_e)

    centers = structure.positions[nuc_of_elec]  # (n_w, n_e, 3)
    positions = centers + jax.random.normal(k_pos, (n_walkers, n_e, 3), dtype=jnp.float64)

    if f is not None:
        sign, log_abs = jax.vmap(lambda r: _as_pair(f(r)))(positions)
    else:
        sign = jnp.zeros(n_walkers)
        log_abs = jnp.full(n_walkers, -jnp.inf)
    return WalkerSet(
        positions, sign, log_abs, jnp.asarray(1.0), k_base, jnp.asarray(0, dtype=jnp.int32)
    )


def refresh_cache(walkers: WalkerSet, f: Callable) -> WalkerSet:
    sign, log_abs = jax.vmap(lambda r: _as_pair(f(r)))(walkers.positions)
    return walkers._replace(sign=sign, log_abs=log_abs)


def mh_step(f: Callable, walkers: WalkerSet):
    """One all-electron Metropolis sweep; returns (walkers, acceptance rate)."""
    n_w, n_e, _ = walkers.positions.shape
    key = jax.random.fold_in(walkers.base_key, walkers.counter)
    wkeys = jax.vmap(lambda i: jax.random.fold_in(key, i))(jnp.arange(n_w))

    noise = jax.vmap(lambda k: jax.random.normal(jax.random.split(k)[0], (n_e, 3), dtype=jnp.float64))(wkeys)
    logu = jnp.log(jax.vmap(lambda k: jax.random.uniform(jax.random.split(k)[1], dtype=jnp.float64))(wkeys))

    proposal = walkers.positions + walkers.width * noise
    sign_p, log_p = jax.vmap(lambda r: _as_pair(f(r)))(proposal)
    accept = (sign_p != 0) & (logu < 2.0 * (log_p - walkers.log_abs))
    rate = jnp.mean(accept.astype(jnp.float64))

    factor = jnp.where(rate > ACC_HIGH, WIDTH_FACTOR, jnp.where(rate < ACC_LOW, 1.0 / WIDTH_FACTOR, 1.0))
    new = WalkerSet(
        jnp.where(accept[:, None, None], proposal, walkers.positions),
        jnp.where(accept, sign_p, walkers.sign),
        jnp.where(accept, log_p, walkers.log_abs),
        jnp.clip(walkers.width * factor, WIDTH_MIN, WIDTH_MAX),
        walkers.base_key,
        walkers.counter + 1,
    )
    return new, rate


def mh_sweeps(f: Callable, walkers: WalkerSet, n_sweeps: int):
    """n_sweeps Metropolis sweeps; returns (walkers, mean acceptance rate)."""

    def body(carry, _):
        w, _ = carry
        w, rate = mh_step(f, w)
        return (w, rate), rate

    (walkers, _), rates = jax.lax.scan(body, (walkers, jnp.asarray(0.0)), length=n_sweeps)
    return walkers, jnp.mean(rates)


def burn_in(f: Callable, walkers: WalkerSet, n_sweeps: int = BURN_IN_SWEEPS):
    """Equilibration after a fresh initialization."""
    walkers = refresh_cache(walkers, f)
    return mh_sweeps(f, walkers, n_sweeps)
