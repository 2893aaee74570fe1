"""Pfaffian wave function: envelopes, orbitals, pair matrix, Jastrow, log Psi.

The wave function for one structure is

    Psi(r) = exp(J(r)) * sum_k c_k Pf(Phi_hat^k A^k Phi_hat^k^T)

where Phi_hat rows are orbital evaluations (spin-up rows from set Phi,
spin-down rows from set Phi-tilde, each of full width N_o), A^k is a learnable
skew matrix, and odd electron counts are handled by bordering the pair matrix
with an extra single-electron orbital.  All per-structure parameters arrive in
one ParamSet dict; shared network weights (the embedding) are passed
separately.
"""

from __future__ import annotations

import jax
import jax.numpy as jnp

from .embedding import EmbeddingConfig, embed
from .errors import ConfigurationError, ParameterDomainError
from .skewlin import SignLogValue, slogpf
from .system import MolecularStructure


def efficient_envelopes(
    structure: MolecularStructure, r: jnp.ndarray, sigma: jnp.ndarray, pi: jnp.ndarray
) -> jnp.ndarray:
    """chi[j][i] = sum_n pi[n][i] exp(-sigma[n] |r_j - R_{nuc(n)}|).

    sigma, pi may carry leading batch axes (..., N_env) / (..., N_env, N_o);
    the contraction is a matrix product, never an outer product over orbitals.
    """
    n_env = sigma.shape[-1]
    n_nuc = structure.n_nuclei
    if n_env % n_nuc != 0:
        raise ParameterDomainError(f"{n_env} envelopes not divisible by {n_nuc} nuclei")
    per_nuc = n_env // n_nuc
    d = jnp.linalg.norm(r[:, None, :] - structure.positions[None, :, :], axis=-1)  # (Ne, Nn)
    d_env = jnp.repeat(d, per_nuc, axis=1)  # (Ne, N_env), envelope e at nucleus e // per_nuc
    expo = jnp.exp(-sigma[..., None, :] * d_env)  # (..., Ne, N_env)
    return jnp.einsum("...je,...ei->...ji", expo, pi)


def orbital_matrix(
    chi: jnp.ndarray, embeddings: jnp.ndarray, w: jnp.ndarray, eta_row: jnp.ndarray
) -> jnp.ndarray:
    """phi[j][i] = chi[j][i] * (h_j . w_i) * eta_row[i], batched over leading axes."""
    hw = jnp.einsum("jf,...if->...ji", embeddings, w)
    return chi * hw * eta_row[..., None, :]


def assemble_phi_hat(phi: jnp.ndarray, phi_tilde: jnp.ndarray, structure: MolecularStructure):
    """Spin-up rows from phi, spin-down rows from phi_tilde, full width each."""
    up = jnp.arange(phi.shape[-2]) < structure.n_up
    return jnp.where(up[:, None], phi, phi_tilde)


def _signed_log(values_sign: jnp.ndarray, values_log: jnp.ndarray) -> SignLogValue:
    """Signed log-sum-exp over the leading axis; all-zero input gives sign 0."""
    finite = values_sign != 0
    logs = jnp.where(finite, values_log, -jnp.inf)
    m = jnp.max(logs)
    m_safe = jnp.where(jnp.isfinite(m), m, 0.0)
    total = jnp.sum(values_sign * jnp.exp(logs - m_safe))
    sign = jnp.sign(total)
    log_abs = jnp.where(total != 0, m_safe + jnp.log(jnp.abs(jnp.where(total != 0, total, 1.0))), -jnp.inf)
    return SignLogValue(sign, log_abs)


def pair_matrix_logpf(
    phi_hat: jnp.ndarray, a_pf: jnp.ndarray, phi_odd: jnp.ndarray | None
) -> SignLogValue:
    """Pf(phi_hat A phi_hat^T), bordered with phi_odd when the count is odd.

    phi_odd is the per-electron value of the extra single-electron orbital;
    pass None for even electron counts.
    """
    m = phi_hat @ a_pf @ phi_hat.T
    m = 0.5 * (m - m.T)  # exact skewness; construction is skew only up to rounding
    if phi_odd is not None:
        m = jnp.block([[m, phi_odd[:, None]], [-phi_odd[None, :], jnp.zeros((1, 1))]])
    sign, log_abs = slogpf(m)
    return SignLogValue(sign, log_abs)


def jastrow(embeddings: jnp.ndarray, r: jnp.ndarray, n_up: int, jp: dict) -> jnp.ndarray:
    """Per-electron MLP term plus fixed-form same/opposite-spin cusp terms."""
    depth = sum(1 for k in jp if k.startswith("w"))
    x = embeddings
    for i in range(1, depth):
        x = jax.nn.silu(x @ jp[f"w{i}"] + jp[f"b{i}"])
    mlp = jnp.sum(x @ jp[f"w{depth}"] + jp[f"b{depth}"])

    n = r.shape[0]
    diff = r[:, None, :] - r[None, :, :]
    eye = jnp.eye(n, dtype=bool)
    d = jnp.sqrt(jnp.sum(jnp.where(eye[..., None], 1.0, diff) ** 2, axis=-1))
    up = jnp.arange(n) < n_up
    same = up[:, None] == up[None, :]
    pair = jnp.triu(jnp.ones((n, n), dtype=bool), k=1)

    a_par = jax.nn.softplus(jp["alpha_par_raw"])
    a_anti = jax.nn.softplus(jp["alpha_anti_raw"])
    cusp_same = -0.25 * a_par**2 / (a_par + d)
    cusp_opp = -0.5 * a_anti**2 / (a_anti + d)
    j_same = jnp.sum(jnp.where(pair & same, cusp_same, 0.0))
    j_opp = jnp.sum(jnp.where(pair & ~same, cusp_opp, 0.0))
    return mlp + jp["beta_par"] * j_same + jp["beta_anti"] * j_opp


def _phi_odd(
    structure: MolecularStructure,
    r: jnp.ndarray,
    embeddings: jnp.ndarray,
    orb: dict,
    k: int,
    eta_index: int,
) -> jnp.ndarray:
    """Extra single-electron orbital, one envelope-weighted term per nucleus.

    Reuses the set-Phi decays of term k so the border column spans the same
    radial space as the main orbitals.
    """
    n_nuc = structure.n_nuclei
    per_nuc = orb["sigma_raw"].shape[-1] // n_nuc
    sigma = jax.nn.softplus(orb["sigma_raw"][k, 0]).reshape(n_nuc, per_nuc)
    d = jnp.linalg.norm(r[:, None, :] - structure.positions[None, :, :], axis=-1)  # (Ne, Nn)
    expo = jnp.exp(-sigma[None, :, :] * d[:, :, None])  # (Ne, Nn, per_nuc)
    chi_m = jnp.einsum("jme,me->jm", expo, orb["odd_pi"][k])  # (Ne, Nn)
    hw_m = embeddings @ orb["odd_w"][k].T  # (Ne, Nn)
    return jnp.sum(chi_m * hw_m * orb["odd_eta"][k, :, eta_index][None, :], axis=1)


def _check_spin_diff(structure: MolecularStructure, n_s: int) -> int:
    s = structure.spin_diff
    if not 0 <= s < n_s:
        raise ConfigurationError(f"spin difference {s} outside eta table range 0..{n_s - 1}")
    return s


def orbital_components(
    structure: MolecularStructure,
    r: jnp.ndarray,
    embed_params: dict,
    theta: dict,
    cfg: EmbeddingConfig,
):
    """Per-term orbital matrices: (phi_hat (N_k,Ne,N_o), phi_odd (N_k,Ne) or None)."""
    orb = theta["orbitals"]
    n_k = orb["c"].shape[0]
    eta_index = _check_spin_diff(structure, orb["eta"].shape[2])

    h = embed(structure, r, embed_params, theta["nuclei"], cfg)
    sigma = jax.nn.softplus(orb["sigma_raw"])  # (k, 2, N_env)
    chi = efficient_envelopes(structure, r, sigma, orb["pi"])  # (k, 2, Ne, N_o)
    phi_sets = orbital_matrix(chi, h, orb["w"], orb["eta"][:, :, eta_index])  # (k, 2, Ne, N_o)

    phi_hat = jnp.stack(
        [assemble_phi_hat(phi_sets[k, 0], phi_sets[k, 1], structure) for k in range(n_k)]
    )
    if structure.n_elec % 2 == 1:
        phi_odd = jnp.stack([_phi_odd(structure, r, h, orb, k, eta_index) for k in range(n_k)])
    else:
        phi_odd = None
    return phi_hat, phi_odd, h


def logpsi(
    structure: MolecularStructure,
    r: jnp.ndarray,
    embed_params: dict,
    theta: dict,
    cfg: EmbeddingConfig,
) -> SignLogValue:
    """Signed log of the full Jastrow-Pfaffian wave function at one configuration."""
    orb = theta["orbitals"]
    phi_hat, phi_odd, h = orbital_components(structure, r, embed_params, theta, cfg)

    signs, logs = [], []
    for k in range(orb["c"].shape[0]):
        border = None if phi_odd is None else phi_odd[k]
        slv = pair_matrix_logpf(phi_hat[k], orb["a"][k], border)
        signs.append(slv.sign * jnp.sign(orb["c"][k]))
        logs.append(slv.log_abs + jnp.log(jnp.abs(jnp.where(orb["c"][k] != 0, orb["c"][k], 1.0))))
    total = _signed_log(jnp.stack(signs), jnp.stack(logs))

    j = jastrow(h, r, structure.n_up, theta["jastrow"])
    return SignLogValue(total.sign, total.log_abs + j)


def slater_logpsi_baseline(mat: jnp.ndarray) -> SignLogValue:
    """Sign/log of det for a square orbital matrix; reference for equivalence tests."""
    if mat.shape[-1] != mat.shape[-2]:
        raise ParameterDomainError(f"square matrix required, got {mat.shape}")
    sign, log_abs = jnp.linalg.slogdet(mat)
    return SignLogValue(sign, log_abs)
