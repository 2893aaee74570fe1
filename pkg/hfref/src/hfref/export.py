"""Assemble and serialize Hartree-Fock reference bundles.

The exported JSON is self-contained: shells plus MO coefficients fully
determine the molecular orbitals anywhere in space, and the probe block
pins the evaluation convention for consumers. Floats are written with 17
significant digits so the file round-trips float64 exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .integrals import eval_ao
from .scf import ScfResult, run_scf

FORMAT_VERSION = 1
PROBE_RADII = (0.1, 0.5, 1.0, 2.0)


def load_structure(path: str | Path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    for key in ("name", "nuclei", "n_up", "n_down"):
        if key not in data:
            raise ValueError(f"structure file missing key {key!r}")
    for nuc in data["nuclei"]:
        if "Z" not in nuc or "pos_bohr" not in nuc:
            raise ValueError("each nucleus needs Z and pos_bohr")
    n_elec = int(data["n_up"]) + int(data["n_down"])
    if n_elec < 1:
        raise ValueError("structure has no electrons")
    if "charge" in data:
        z_sum = sum(int(n["Z"]) for n in data["nuclei"])
        if z_sum - int(data["charge"]) != n_elec:
            raise ValueError(
                f"charge/spin mismatch: sum(Z)={z_sum}, charge={data['charge']}, "
                f"but n_up+n_down={n_elec}"
            )
    return data


def probe_points(centers: np.ndarray) -> np.ndarray:
    """8 points per nucleus at radii 0.1/0.5/1/2 bohr along +-axes, deduplicated."""
    points = []
    seen = set()
    axes = np.eye(3)
    for center in centers:
        for r_idx, radius in enumerate(PROBE_RADII):
            axis = axes[r_idx % 3]
            for sign in (1.0, -1.0):
                p = center + sign * radius * axis
                key = tuple(p.tolist())
                if key not in seen:
                    seen.add(key)
                    points.append(p)
    return np.asarray(points)


def compute_reference(structure: dict, restricted: bool | None = None) -> dict:
    charges = [int(n["Z"]) for n in structure["nuclei"]]
    centers = np.asarray([n["pos_bohr"] for n in structure["nuclei"]], dtype=np.float64)
    n_up, n_down = int(structure["n_up"]), int(structure["n_down"])
    result = run_scf(centers, charges, n_up, n_down, restricted=restricted)
    return build_bundle(structure, centers, result)


def build_bundle(structure: dict, centers: np.ndarray, result: ScfResult) -> dict:
    points = probe_points(centers)
    ao = eval_ao(result.shells, centers, points)
    mo_up = ao @ result.mo_coeff_up
    mo_down = ao @ result.mo_coeff_down
    return {
        "format_version": FORMAT_VERSION,
        "structure": {
            "name": structure["name"],
            "nuclei": [
                {"Z": int(n["Z"]), "pos_bohr": [float(x) for x in n["pos_bohr"]]}
                for n in structure["nuclei"]
            ],
            "n_up": int(structure["n_up"]),
            "n_down": int(structure["n_down"]),
        },
        "basis": "STO-6G",
        "shells": [
            {
                "center_index": sh.center_index,
                "l": sh.l,
                "exponents": list(sh.exponents),
                "coefficients": list(sh.coefficients),
            }
            for sh in result.shells
        ],
        "mo_coeff_up": result.mo_coeff_up.tolist(),
        "mo_coeff_down": result.mo_coeff_down.tolist(),
        "n_occ_up": result.mo_coeff_up.shape[1],
        "n_occ_down": result.mo_coeff_down.shape[1],
        "hf_energy_hartree": result.energy,
        "probe": {
            "points_bohr": points.tolist(),
            "mo_values_up": mo_up.tolist(),
            "mo_values_down": mo_down.tolist(),
        },
    }


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        # 17 significant digits round-trip any float64 exactly
        text = format(float(value), ".17g")
        return text if ("e" in text or "." in text or "inf" in text or "nan" in text) else text + ".0"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}: {_format_value(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    raise TypeError(f"cannot serialize {type(value)}")


def dumps_bundle(bundle: dict) -> str:
    return _format_value(bundle) + "\n"


def write_bundle(bundle: dict, path: str | Path) -> None:
    Path(path).write_text(dumps_bundle(bundle))
