"""STO-6G Hartree-Fock reference generator for small molecules."""

from .basis import Shell, ao_count, build_shells
from .export import build_bundle, compute_reference, load_structure, probe_points, write_bundle
from .scf import ScfError, ScfResult, run_scf

__version__ = "0.1.0"

__all__ = [
    "Shell",
    "ao_count",
    "build_shells",
    "build_bundle",
    "compute_reference",
    "load_structure",
    "probe_points",
    "write_bundle",
    "ScfError",
    "ScfResult",
    "run_scf",
    "__version__",
]
