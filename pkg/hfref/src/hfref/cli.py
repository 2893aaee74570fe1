"""Command line entry: convert a structure JSON into an hf_ref.json bundle."""

from __future__ import annotations

import argparse
import sys

from .export import compute_reference, load_structure, write_bundle
from .scf import ScfError


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hfref-export",
        description="Run STO-6G Hartree-Fock and export orbitals, energy, and probe values.",
    )
    parser.add_argument("structure", help="structure JSON file")
    parser.add_argument("--out", required=True, help="output hf_ref.json path")
    parser.add_argument(
        "--restricted",
        choices=["auto", "yes", "no"],
        default="auto",
        help="spin-restricted SCF; auto = restricted iff n_up == n_down",
    )
    args = parser.parse_args(argv)

    try:
        structure = load_structure(args.structure)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    restricted = {"auto": None, "yes": True, "no": False}[args.restricted]
    try:
        bundle = compute_reference(structure, restricted=restricted)
    except ScfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_bundle(bundle, args.out)
    print(f"wrote {args.out} (HF energy {bundle['hf_energy_hartree']:.6f} hartree)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
