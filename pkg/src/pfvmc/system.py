"""Molecular structures: nuclei, charges, and spin occupation.

A structure is a pytree whose only dynamic leaf is the nuclear positions;
charges and spin counts are static so jit recompiles only when the actual
system (not its geometry) changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jax
import jax.numpy as jnp
import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class MolecularStructure:
    """Nuclei positions (bohr), charges, and (n_up, n_down) electron counts.

    The convention n_up >= n_down is enforced by relabeling spins on input;
    electron coordinates are always ordered with the n_up up-electrons first.
    """

    positions: jnp.ndarray  # (n_nuclei, 3)
    charges: tuple[int, ...]
    n_up: int
    n_down: int
    name: str = field(default="", compare=False)

    @property
    def n_nuclei(self) -> int:
        return len(self.charges)

    @property
    def n_elec(self) -> int:
        return self.n_up + self.n_down

    @property
    def spin_diff(self) -> int:
        return self.n_up - self.n_down

    @property
    def static_key(self) -> tuple:
        """Hashable key identifying everything jit must specialize on."""
        return (self.charges, self.n_up, self.n_down)

    def replace_positions(self, positions) -> "MolecularStructure":
        return MolecularStructure(
            jnp.asarray(positions, dtype=jnp.float64), self.charges, self.n_up, self.n_down, self.name
        )


def make_structure(positions, charges, n_up, n_down, name="") -> MolecularStructure:
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise InvalidInputError(f"positions must be (n_nuclei, 3), got {positions.shape}")
    charges = tuple(int(z) for z in charges)
    if len(charges) != positions.shape[0]:
        raise InvalidInputError("one charge per nucleus required")
    if any(z < 1 for z in charges):
        raise InvalidInputError("charges must be positive integers")
    if n_up + n_down < 1:
        raise InvalidInputError("at least one electron required")
    if n_up < 0 or n_down < 0:
        raise InvalidInputError("negative electron counts")
    for i in range(len(charges)):
        for j in range(i + 1, len(charges)):
            if np.linalg.norm(positions[i] - positions[j]) < 1e-10:
                raise InvalidInputError(f"nuclei {i} and {j} coincide")
    if n_up < n_down:  # spin relabeling keeps the n_up >= n_down convention
        n_up, n_down = n_down, n_up
    return MolecularStructure(jnp.asarray(positions), charges, int(n_up), int(n_down), str(name))


def structure_from_dict(data: dict) -> MolecularStructure:
    try:
        nuclei = data["nuclei"]
        positions = [n["pos_bohr"] for n in nuclei]
        charges = [n["Z"] for n in nuclei]
        return make_structure(
            positions, charges, int(data["n_up"]), int(data["n_down"]), data.get("name", "")
        )
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed structure record: {exc}") from exc


def structure_to_dict(s: MolecularStructure) -> dict:
    return {
        "name": s.name,
        "nuclei": [
            {"Z": int(z), "pos_bohr": [float(x) for x in pos]}
            for z, pos in zip(s.charges, np.asarray(s.positions))
        ],
        "n_up": s.n_up,
        "n_down": s.n_down,
    }


def load_structure_file(path: str | Path) -> MolecularStructure:
    with open(path) as fh:
        return structure_from_dict(json.load(fh))


def _flatten(s: MolecularStructure):
    return (s.positions,), (s.charges, s.n_up, s.n_down, s.name)


def _unflatten(aux, children):
    charges, n_up, n_down, name = aux
    return MolecularStructure(children[0], charges, n_up, n_down, name)


jax.tree_util.register_pytree_node(MolecularStructure, _flatten, _unflatten)
