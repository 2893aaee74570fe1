#!/usr/bin/env python3
"""Regenerate the committed Hartree-Fock reference bundles in tests/fixtures.

Run from the repository root:  python3 tools/make_fixtures.py
Output is byte-deterministic, so reruns leave committed files unchanged.
"""

from pathlib import Path

from hfref.export import compute_reference, write_bundle

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def nucleus(z, x=0.0, y=0.0, zz=0.0):
    return {"Z": z, "pos_bohr": [x, y, zz]}


def chain(n, spacing):
    half = spacing * (n - 1) / 2.0
    return [nucleus(1, zz=i * spacing - half) for i in range(n)]


SYSTEMS = {
    "h_hf_ref.json": {"name": "H", "nuclei": [nucleus(1)], "n_up": 1, "n_down": 0},
    "he_hf_ref.json": {"name": "He", "nuclei": [nucleus(2)], "n_up": 1, "n_down": 1},
    "he_plus_hf_ref.json": {"name": "He+", "nuclei": [nucleus(2)], "n_up": 1, "n_down": 0},
    "li_hf_ref.json": {"name": "Li", "nuclei": [nucleus(3)], "n_up": 2, "n_down": 1},
    "h2_hf_ref.json": {
        "name": "H2_1.4",
        "nuclei": [nucleus(1, zz=-0.7), nucleus(1, zz=0.7)],
        "n_up": 1,
        "n_down": 1,
    },
    "lih_hf_ref.json": {
        "name": "LiH_3.015",
        "nuclei": [nucleus(3, zz=-1.5075), nucleus(1, zz=1.5075)],
        "n_up": 2,
        "n_down": 2,
    },
    "h4_hf_ref.json": {"name": "H4_1.8", "nuclei": chain(4, 1.8), "n_up": 2, "n_down": 2},
}


def main():
    FIXTURES.mkdir(parents=True, exist_ok=True)
    for fname, struct in SYSTEMS.items():
        bundle = compute_reference(struct)
        out = FIXTURES / fname
        write_bundle(bundle, out)
        print(f"{fname:24s} E_HF = {bundle['hf_energy_hartree']:+.9f}")


if __name__ == "__main__":
    main()
