"""Restricted and unrestricted Hartree-Fock with DIIS convergence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import Shell, build_shells
from .integrals import eri, kinetic, nuclear, overlap


class ScfError(RuntimeError):
    """SCF failed to converge; carries the last energy change for diagnostics."""


@dataclass
class ScfResult:
    energy: float  # total HF energy, hartree
    mo_coeff_up: np.ndarray  # (n_ao, n_up)
    mo_coeff_down: np.ndarray  # (n_ao, n_down)
    n_iterations: int
    shells: list[Shell]


def _canonical_sign(c: np.ndarray) -> np.ndarray:
    """Make each MO column's largest-magnitude entry positive (deterministic output)."""
    out = c.copy()
    for j in range(c.shape[1]):
        k = int(np.argmax(np.abs(out[:, j])))
        if out[k, j] < 0:
            out[:, j] = -out[:, j]
    return out


def _nuclear_repulsion(centers: np.ndarray, charges: np.ndarray) -> float:
    e = 0.0
    for i in range(len(charges)):
        for j in range(i + 1, len(charges)):
            e += charges[i] * charges[j] / np.linalg.norm(centers[i] - centers[j])
    return float(e)


def _build_fock_terms(eri_t: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    j = np.einsum("pqrs,rs->pq", eri_t, d)
    k = np.einsum("prqs,rs->pq", eri_t, d)
    return j, k


class _Diis:
    def __init__(self, max_vecs: int = 8):
        self.focks: list[np.ndarray] = []
        self.errors: list[np.ndarray] = []
        self.max_vecs = max_vecs

    def push(self, fock_flat: np.ndarray, error_flat: np.ndarray) -> np.ndarray:
        self.focks.append(fock_flat)
        self.errors.append(error_flat)
        if len(self.focks) > self.max_vecs:
            self.focks.pop(0)
            self.errors.pop(0)
        m = len(self.focks)
        if m == 1:
            return fock_flat
        b = -np.ones((m + 1, m + 1))
        b[m, m] = 0.0
        for i in range(m):
            for j in range(m):
                b[i, j] = float(self.errors[i] @ self.errors[j])
        rhs = np.zeros(m + 1)
        rhs[m] = -1.0
        try:
            coeffs = np.linalg.solve(b, rhs)[:m]
        except np.linalg.LinAlgError:
            return fock_flat
        return sum(c * f for c, f in zip(coeffs, self.focks))


def run_scf(
    centers: np.ndarray,
    charges: list[int],
    n_up: int,
    n_down: int,
    restricted: bool | None = None,
    e_tol: float = 1e-10,
    d_tol: float = 1e-8,
    max_iter: int = 300,
) -> ScfResult:
    """Converge HF for the given nuclei and spin occupation.

    restricted=None picks RHF for closed shells and UHF otherwise.
    """
    centers = np.asarray(centers, dtype=np.float64)
    charge_arr = np.asarray(charges, dtype=np.float64)
    if restricted is None:
        restricted = n_up == n_down
    if restricted and n_up != n_down:
        raise ValueError("restricted SCF needs n_up == n_down")

    shells = build_shells(list(charges))
    s = overlap(shells, centers)
    h = kinetic(shells, centers) + nuclear(shells, centers, charge_arr)
    g = eri(shells, centers)
    e_nn = _nuclear_repulsion(centers, charge_arr)

    # symmetric orthogonalization
    s_val, s_vec = np.linalg.eigh(s)
    x = s_vec @ np.diag(s_val**-0.5) @ s_vec.T

    def solve_fock(f: np.ndarray) -> np.ndarray:
        fp = x.T @ f @ x
        _, cp = np.linalg.eigh(fp)
        return x @ cp

    c_up = solve_fock(h)
    c_dn = c_up.copy()
    e_old = 0.0
    diis = _Diis()
    n_ao = s.shape[0]

    for iteration in range(1, max_iter + 1):
        d_up = c_up[:, :n_up] @ c_up[:, :n_up].T
        d_dn = c_dn[:, :n_down] @ c_dn[:, :n_down].T
        d_tot = d_up + d_dn

        j_tot, _ = _build_fock_terms(g, d_tot)
        _, k_up = _build_fock_terms(g, d_up)
        _, k_dn = _build_fock_terms(g, d_dn)
        f_up = h + j_tot - k_up
        f_dn = h + j_tot - k_dn

        energy = 0.5 * float(np.sum(d_tot * h) + np.sum(d_up * f_up) + np.sum(d_dn * f_dn)) + e_nn

        err_up = x.T @ (f_up @ d_up @ s - s @ d_up @ f_up) @ x
        err_dn = x.T @ (f_dn @ d_dn @ s - s @ d_dn @ f_dn) @ x
        err_norm = max(np.abs(err_up).max(), np.abs(err_dn).max())
        if abs(energy - e_old) < e_tol and err_norm < d_tol and iteration > 2:
            c_up_occ = _canonical_sign(c_up[:, :n_up])
            c_dn_occ = _canonical_sign(c_dn[:, :n_down])
            if restricted:
                c_dn_occ = c_up_occ[:, :n_down].copy()
            return ScfResult(energy, c_up_occ, c_dn_occ, iteration, shells)
        e_old = energy

        stacked = diis.push(
            np.concatenate([f_up.ravel(), f_dn.ravel()]),
            np.concatenate([err_up.ravel(), err_dn.ravel()]),
        )
        f_up_d = stacked[: n_ao * n_ao].reshape(n_ao, n_ao)
        f_dn_d = stacked[n_ao * n_ao :].reshape(n_ao, n_ao)
        if restricted:
            f_avg = 0.5 * (f_up_d + f_dn_d)
            c_up = solve_fock(f_avg)
            c_dn = c_up
        else:
            c_up = solve_fock(f_up_d)
            c_dn = solve_fock(f_dn_d)

    raise ScfError(f"SCF did not converge in {max_iter} iterations (last dE={energy - e_old:.3e})")
