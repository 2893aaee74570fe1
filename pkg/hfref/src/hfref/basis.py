"""Minimal STO-6G basis for H through Ne.

Each Slater radial function is expanded in six Gaussian primitives. The
zeta=1 expansions below were produced by tools/fit_sto6g.py (least-squares
fit under the r^2 dr measure; the 1s coefficients agree with the published
STO-6G tables to ~1e-5). Element basis sets scale the exponents by zeta^2
with the standard molecular Slater exponents. 2s and 2p share one exponent
set, as usual for minimal bases.

Shell coefficients returned by :func:`shells_for` are pre-multiplied by the
primitive normalization constants, so an atomic orbital is evaluated as a
plain contraction  sum_i c_i * (cartesian monomial) * exp(-alpha_i r^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# zeta = 1 expansions, exponents descending (frozen output of tools/fit_sto6g.py)
EXP_1S = (23.10316214, 4.235929495, 1.18505856, 0.4070993097, 0.1580884846, 0.06510954944)
COEF_1S = (0.009163535693, 0.04936134537, 0.168538038, 0.3705625663, 0.4164915417, 0.1303340758)

EXP_2SP = (10.30869096, 2.040358885, 0.634141979, 0.2439771673, 0.1059594299, 0.04856895394)
COEF_2S = (-0.01325277815, -0.04699168171, -0.03378527574, 0.2502420091, 0.5951169129, 0.2407051656)
COEF_2P = (0.003759698315, 0.03767935617, 0.1738967997, 0.4180365857, 0.4258590826, 0.1017078615)

# Standard molecular Slater exponents (1s, 2sp); 2sp is None for H and He.
SLATER_ZETA: dict[int, tuple[float, float | None]] = {
    1: (1.24, None),
    2: (1.69, None),
    3: (2.69, 0.80),
    4: (3.68, 1.15),
    5: (4.68, 1.45),
    6: (5.67, 1.72),
    7: (6.67, 1.95),
    8: (7.66, 2.25),
    9: (8.65, 2.55),
    10: (9.64, 2.88),
}

ELEMENT_SYMBOLS = {1: "H", 2: "He", 3: "Li", 4: "Be", 5: "B", 6: "C", 7: "N", 8: "O", 9: "F", 10: "Ne"}


@dataclass(frozen=True)
class Shell:
    """One contracted shell; l=0 yields one AO, l=1 yields x,y,z AOs."""

    center_index: int
    l: int
    exponents: tuple[float, ...]
    coefficients: tuple[float, ...]  # primitive norms folded in

    @property
    def n_ao(self) -> int:
        return 1 if self.l == 0 else 3


def primitive_norm(alpha: float, l: int) -> float:
    """Normalization of the cartesian primitive x^l exp(-alpha r^2), l <= 1."""
    n_s = (2.0 * alpha / math.pi) ** 0.75
    if l == 0:
        return n_s
    if l == 1:
        return n_s * 2.0 * math.sqrt(alpha)
    raise ValueError(f"only s and p primitives supported, got l={l}")


def _scaled(exps, coefs, zeta: float, l: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    scaled_exps = tuple(a * zeta * zeta for a in exps)
    scaled_coefs = tuple(c * primitive_norm(a, l) for c, a in zip(coefs, scaled_exps))
    return scaled_exps, scaled_coefs


def shells_for(charge: int, center_index: int) -> list[Shell]:
    if charge not in SLATER_ZETA:
        raise ValueError(f"unsupported element Z={charge}; STO-6G covers Z=1..10 here")
    zeta_1s, zeta_2sp = SLATER_ZETA[charge]
    e1, c1 = _scaled(EXP_1S, COEF_1S, zeta_1s, 0)
    shells = [Shell(center_index, 0, e1, c1)]
    if zeta_2sp is not None:
        e2s, c2s = _scaled(EXP_2SP, COEF_2S, zeta_2sp, 0)
        shells.append(Shell(center_index, 0, e2s, c2s))
        e2p, c2p = _scaled(EXP_2SP, COEF_2P, zeta_2sp, 1)
        shells.append(Shell(center_index, 1, e2p, c2p))
    return shells


def build_shells(charges: list[int]) -> list[Shell]:
    shells: list[Shell] = []
    for idx, z in enumerate(charges):
        shells.extend(shells_for(z, idx))
    return shells


def ao_count(shells: list[Shell]) -> int:
    return sum(s.n_ao for s in shells)
