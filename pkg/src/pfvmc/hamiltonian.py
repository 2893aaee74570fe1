"""Molecular Hamiltonian in atomic units and the local energy of a log-field.

E_L = -1/2 (laplacian log|Psi| + |grad log|Psi||^2) + V with the usual
electron-electron, electron-nucleus, and nucleus-nucleus Coulomb sums.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .diffengine import grad_and_laplacian
from .errors import SingularMatrixError
from .system import MolecularStructure


class LocalEnergyTerms(NamedTuple):
    kinetic: jnp.ndarray
    v_ee: jnp.ndarray
    v_en: jnp.ndarray
    v_nn: jnp.ndarray
    total: jnp.ndarray


def _pairwise_inv(x: jnp.ndarray) -> jnp.ndarray:
    """Sum of 1/d over unordered pairs of rows of x; NaN-free for distinct rows."""
    n = x.shape[0]
    diff = x[:, None, :] - x[None, :, :]
    eye = jnp.eye(n, dtype=bool)
    d = jnp.sqrt(jnp.sum(jnp.where(eye[..., None], 1.0, diff) ** 2, axis=-1))
    pair = jnp.triu(jnp.ones((n, n), dtype=bool), k=1)
    return jnp.sum(jnp.where(pair, 1.0 / jnp.where(pair, d, 1.0), 0.0))


def potential_energy(structure: MolecularStructure, r: jnp.ndarray):
    """(v_ee, v_en, v_nn) Coulomb sums in hartree."""
    z = jnp.asarray(structure.charges, dtype=jnp.float64)
    v_ee = _pairwise_inv(r)
    d_en = jnp.linalg.norm(r[:, None, :] - structure.positions[None, :, :], axis=-1)
    v_en = -jnp.sum(z[None, :] / d_en)

    pos = structure.positions
    n = pos.shape[0]
    if n > 1:
        dn = jnp.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        pair = jnp.triu(jnp.ones((n, n), dtype=bool), k=1)
        v_nn = jnp.sum(jnp.where(pair, z[:, None] * z[None, :] / jnp.where(pair, dn, 1.0), 0.0))
    else:
        v_nn = jnp.zeros(())
    return v_ee, v_en, v_nn


def check_coincidence(structure: MolecularStructure, r: np.ndarray) -> None:
    """Guard for exactly coincident particles (eager paths only)."""
    r = np.asarray(r)
    n = r.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            if np.array_equal(r[i], r[j]):
                raise SingularMatrixError(f"electrons {i} and {j} coincide exactly")
    pos = np.asarray(structure.positions)
    for i in range(n):
        for m in range(pos.shape[0]):
            if np.array_equal(r[i], pos[m]):
                raise SingularMatrixError(f"electron {i} sits exactly on nucleus {m}")


def local_energy(f: Callable, structure: MolecularStructure, r: jnp.ndarray) -> LocalEnergyTerms:
    """Local energy of the log-field f (r -> SignLogValue) at configuration r."""
    grad, lap = grad_and_laplacian(f, r)
    kinetic = -0.5 * (lap + jnp.sum(grad * grad))
    v_ee, v_en, v_nn = potential_energy(structure, r)
    return LocalEnergyTerms(kinetic, v_ee, v_en, v_nn, kinetic + v_ee + v_en + v_nn)
