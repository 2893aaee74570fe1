"""VMC energy gradient estimation and the Spring preconditioner.

Each step: sample with fixed sweeps per structure, evaluate local energies,
clip them per molecule around the median, center the parameter Jacobian per
molecule, and solve the small dual system (O O^T + lambda I) y = eps + mu O d
in float64 to obtain the preconditioned update d = O^T y + mu d_prev with a
norm constraint.  All structures train against the same shared weights in one
full batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np
import scipy.linalg
from jax.flatten_util import ravel_pytree

from .errors import ConditioningError, InvalidInputError, NumericInstabilityError
from .hamiltonian import local_energy
from .sampler import WalkerSet, mh_sweeps


class ClipConfig(NamedTuple):
    clip_factor: float = 5.0


@dataclass
class SpringState:
    delta: np.ndarray  # previous preconditioned update, length P
    lam: float = 0.001
    mu: float = 0.99
    norm_c: float = 1e-3
    t: int = 0


def spring_init(n_params: int, lam: float = 0.001, mu: float = 0.99, norm_c: float = 1e-3):
    if lam <= 0 or not 0 <= mu < 1:
        raise InvalidInputError(f"need lam > 0 and 0 <= mu < 1, got {lam}, {mu}")
    return SpringState(np.zeros(n_params), lam, mu, norm_c, 0)


@dataclass(frozen=True)
class Schedule:
    eta0: float = 0.02
    decay: float = 1e-4

    def eta(self, t: int) -> float:
        return self.eta0 / (1.0 + t * self.decay)


def clip_energies(energies: np.ndarray, cfg: ClipConfig = ClipConfig()) -> np.ndarray:
    """Clamp one molecule's local energies to median +- factor * mean |E - median|."""
    if cfg.clip_factor <= 0:
        raise InvalidInputError("clip factor must be positive")
    e = np.asarray(energies, dtype=np.float64)
    if e.size < 1:
        raise InvalidInputError("need at least one sample to clip")
    m = np.median(e)
    d = np.mean(np.abs(e - m))
    return np.clip(e, m - cfg.clip_factor * d, m + cfg.clip_factor * d)


def _blocks(boundaries) -> list[slice]:
    out, start = [], 0
    for n in boundaries:
        out.append(slice(start, start + n))
        start += n
    return out


def center_jacobian_per_molecule(rows: np.ndarray, boundaries) -> np.ndarray:
    """Subtract each molecule block's mean row within the stacked Jacobian."""
    rows = np.array(rows, dtype=np.float64)
    if sum(boundaries) != rows.shape[0]:
        raise InvalidInputError("molecule boundaries do not partition the rows")
    for blk in _blocks(boundaries):
        rows[blk] -= rows[blk].mean(axis=0, keepdims=True)
    return rows


def vmc_gradient_samples(clipped: np.ndarray, rows: np.ndarray, boundaries) -> np.ndarray:
    """Plain energy gradient: mean over samples of (E - Ebar_molecule) * row."""
    clipped = np.asarray(clipped, dtype=np.float64)
    weights = clipped.copy()
    for blk in _blocks(boundaries):
        weights[blk] -= clipped[blk].mean()
    return weights @ np.asarray(rows, dtype=np.float64) / clipped.size


def spring_update(obar: np.ndarray, eps: np.ndarray, state: SpringState, eta: float):
    """One preconditioned update; returns (delta, new state).

    Solves (obar obar^T + lambda I) y = eps - mu obar delta_prev by Cholesky
    (one retry with 10x lambda jitter), then delta = obar^T y + mu delta_prev,
    rescaled so |eta delta| stays within the norm constraint.  The subtracted
    projection is what the dual form of the damped normal equations
    (O^T O + lambda I) delta = O^T eps + lambda mu delta_prev works out to;
    adding it instead feeds the previous step back into itself and diverges.
    """
    obar = np.asarray(obar, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    n = obar.shape[0]

    gram = scipy.linalg.blas.dsyrk(1.0, obar)  # upper triangle of obar @ obar.T
    gram = np.triu(gram) + np.triu(gram, 1).T
    gram[np.diag_indices(n)] += state.lam
    rhs = eps - state.mu * (obar @ state.delta)
    try:
        factor = scipy.linalg.cho_factor(gram, lower=False)
    except np.linalg.LinAlgError:
        gram[np.diag_indices(n)] += 10.0 * state.lam
        try:
            factor = scipy.linalg.cho_factor(gram, lower=False)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError("dual Gram matrix not positive definite after jitter") from exc
    y = scipy.linalg.cho_solve(factor, rhs)

    delta = obar.T @ y + state.mu * state.delta
    step_norm = eta * float(np.linalg.norm(delta))
    scale = min(1.0, np.sqrt(state.norm_c) / max(step_norm, 1e-300))
    delta = delta * scale
    return delta, SpringState(delta, state.lam, state.mu, state.norm_c, state.t + 1)


class StructureKernels(NamedTuple):
    """Compiled sampling/measurement functions for one structure."""

    sample: Callable  # (params, walkers) -> (walkers, acceptance)
    measure: Callable  # (params, walkers) -> (energies, jacobian rows)


def make_structure_kernels(structure, make_field: Callable, n_sweeps: int) -> StructureKernels:
    """Build jitted kernels; make_field(params, structure) -> (r -> SignLogValue)."""

    def sample(params, walkers: WalkerSet):
        f = lambda r: make_field(params, structure)(r)
        return mh_sweeps(f, walkers, n_sweeps)

    def measure(params, walkers: WalkerSet):
        f = lambda r: make_field(params, structure)(r)
        energies = jax.vmap(lambda r: local_energy(f, structure, r).total)(walkers.positions)

        def row(r):
            g = jax.grad(lambda p: make_field(p, structure)(r).log_abs)(params)
            return ravel_pytree(g)[0]

        return energies, jax.vmap(row)(walkers.positions)

    return StructureKernels(jax.jit(sample), jax.jit(measure))


def train_step(
    params,
    structures,
    kernels: list[StructureKernels],
    walker_sets: list[WalkerSet],
    spring_state: SpringState,
    schedule: Schedule,
    clip_cfg: ClipConfig = ClipConfig(),
):
    """One full-batch optimization step over all structures.

    Returns (new params, new walker sets, new spring state, trace records).
    """
    flat, unravel = ravel_pytree(params)
    n_total = sum(w.positions.shape[0] for w in walker_sets)

    new_walkers, raw_blocks, row_blocks, records = [], [], [], []
    for s, kern, w in zip(structures, kernels, walker_sets):
        w, acc = kern.sample(params, w)
        nodal = float(jnp.mean((w.sign == 0).astype(jnp.float64)))
        if nodal > 0.5:
            raise NumericInstabilityError(
                f"{nodal:.0%} of walkers on the nodal surface for {s.name or 'structure'}"
            )
        energies, rows = kern.measure(params, w)
        new_walkers.append(w)
        raw_blocks.append(np.asarray(energies, dtype=np.float64))
        row_blocks.append(np.asarray(rows, dtype=np.float64))
        records.append({
            "structure_id": s.name or f"structure{len(records)}",
            "acceptance": float(acc),
        })

    boundaries = [b.size for b in raw_blocks]
    clipped = np.concatenate([clip_energies(b, clip_cfg) for b in raw_blocks])
    rows = np.concatenate(row_blocks, axis=0)

    eps = clipped.copy()
    for blk, rec, raw in zip(_blocks(boundaries), records, raw_blocks):
        block = clipped[blk]
        rec["energy_mean"] = float(block.mean())
        rec["energy_var"] = float(block.var())
        rec["energy_mean_raw"] = float(raw.mean())
        eps[blk] -= block.mean()
    eps /= np.sqrt(n_total)
    obar = center_jacobian_per_molecule(rows, boundaries) / np.sqrt(n_total)

    eta = schedule.eta(spring_state.t)
    delta, spring_state = spring_update(obar, eps, spring_state, eta)
    new_flat = np.asarray(flat) - eta * delta
    new_params = unravel(jnp.asarray(new_flat))

    delta_norm = float(np.linalg.norm(eta * delta))
    for rec in records:
        rec["step"] = spring_state.t - 1
        rec["delta_norm"] = delta_norm
    return new_params, new_walkers, spring_state, records
