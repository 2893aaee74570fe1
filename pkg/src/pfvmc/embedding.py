"""Permutation-equivariant electron embeddings.

Electrons exchange messages with each other once (spin-resolved, distance
filtered), aggregate onto nuclei, the nuclei update through residual layers
with opposite-spin context, and the result diffuses back to the electrons.
All couplings decay with learnable Gaussian filters, so far-apart fragments
decouple and the embedding stays size consistent.

Per-nucleus filter parameters (decay lengths, direction nets, nucleus
embeddings) are supplied per structure by the parameter generator; the rest
of the weights here are ordinary shared parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp

from .system import MolecularStructure


@dataclass(frozen=True)
class EmbeddingConfig:
    feature_dim: int = 64  # final per-electron embedding width
    ee_int_dim: int = 16  # electron-electron interaction width
    pair_dim: int = 32  # electron-nucleus pair / nucleus embedding width
    n_update_layers: int = 2
    filter_hidden: int = 16  # direction-net hidden width
    filter_core: int = 8  # shared filter core output width
    n_rad: int = 8  # Gaussian radial envelopes per filter core
    sigma_norm: float = 1.0  # bohr, density normalization length

    def validate(self) -> None:
        dims = (
            self.feature_dim, self.ee_int_dim, self.pair_dim, self.n_update_layers,
            self.filter_hidden, self.filter_core, self.n_rad,
        )
        if any(d < 1 for d in dims):
            raise ValueError("all embedding dimensions must be >= 1")
        if self.sigma_norm <= 0:
            raise ValueError("sigma_norm must be positive")


def rescaled_features(ri: jnp.ndarray, rj: jnp.ndarray) -> jnp.ndarray:
    """[log(1+d)/d * (ri-rj), log(1+d)/d * d]; the d=0 limit of the prefactor is 1."""
    diff = ri - rj
    d2 = jnp.sum(diff * diff, axis=-1)
    safe_d = jnp.sqrt(jnp.where(d2 > 0, d2, 1.0))
    pref = jnp.where(d2 > 0, jnp.log1p(safe_d) / safe_d, 1.0)
    d = jnp.where(d2 > 0, safe_d, 0.0)
    return pref[..., None] * jnp.concatenate([diff, d[..., None]], axis=-1)


def _filter_beta(core: dict, sigma: jnp.ndarray, w1, b1, x: jnp.ndarray, d: jnp.ndarray):
    """Shared filter core: Gaussian radial mix times a two-layer net of x."""
    gauss = jnp.exp(-((d[..., None] / sigma) ** 2))  # (..., n_rad)
    radial = gauss @ core["w_env"]  # (..., core_dim)
    direction = jax.nn.silu(x @ w1 + b1) @ core["w2"] + core["b2"]
    return radial * direction


def spatial_filter(core: dict, w_map: jnp.ndarray, x: jnp.ndarray) -> jnp.ndarray:
    """Gamma(x) = beta(x) W for a standalone (non nucleus-indexed) filter."""
    d = jnp.linalg.norm(x, axis=-1) if x.shape[-1] > 1 else jnp.abs(x[..., 0])
    beta = _filter_beta(core, core["sigma"], core["w1"], core["b1"], x, d)
    return beta @ w_map


def density_normalizer(structure: MolecularStructure, r: jnp.ndarray, sigma_norm: float):
    """mu(r) = 1 + sum_m Z_m/2 exp(-|r - R_m|^2 / sigma_norm^2); always >= 1."""
    diff = r[..., None, :] - structure.positions
    d2 = jnp.sum(diff * diff, axis=-1)
    z = jnp.asarray(structure.charges, dtype=jnp.float64)
    return 1.0 + jnp.sum(0.5 * z * jnp.exp(-d2 / sigma_norm**2), axis=-1)


def _normal(key, shape, fan_in):
    return jax.random.normal(key, shape, dtype=jnp.float64) / jnp.sqrt(float(fan_in))


def init_embed_params(key, cfg: EmbeddingConfig) -> dict:
    """Shared (structure-independent) embedding weights."""
    cfg.validate()
    keys = iter(jax.random.split(key, 24))
    core_scalar = {
        # scalar-distance filter core for the electron pair channel
        "sigma": jnp.exp(jnp.linspace(jnp.log(0.5), jnp.log(5.0), cfg.n_rad)),
        "w_env": _normal(next(keys), (cfg.n_rad, cfg.filter_core), cfg.n_rad),
        "w1": _normal(next(keys), (1, cfg.filter_hidden), 1),
        "b1": jnp.zeros(cfg.filter_hidden),
        "w2": _normal(next(keys), (cfg.filter_hidden, cfg.filter_core), cfg.filter_hidden),
        "b2": jnp.zeros(cfg.filter_core),
    }
    p = cfg.pair_dim
    return {
        "ee_core": core_scalar,
        "ee_w_same": _normal(next(keys), (4, cfg.ee_int_dim), 4),
        "ee_w_diff": _normal(next(keys), (4, cfg.ee_int_dim), 4),
        "ee_map_same": _normal(next(keys), (cfg.filter_core, cfg.ee_int_dim), cfg.filter_core),
        "ee_map_diff": _normal(next(keys), (cfg.filter_core, cfg.ee_int_dim), cfg.filter_core),
        "ee_w_out": _normal(next(keys), (cfg.ee_int_dim, p), cfg.ee_int_dim),
        # electron-nucleus filter core pieces shared across nuclei and instances
        "en_w_env": _normal(next(keys), (cfg.n_rad, cfg.filter_core), cfg.n_rad),
        "en_w2": _normal(next(keys), (cfg.filter_hidden, cfg.filter_core), cfg.filter_hidden),
        "en_b2": jnp.zeros(cfg.filter_core),
        # per-instance linear maps on the shared core
        "map_nuc": _normal(next(keys), (cfg.filter_core, p), cfg.filter_core),
        "map_elec": _normal(next(keys), (cfg.filter_core, p), cfg.filter_core),
        "map_diff": _normal(next(keys), (cfg.filter_core, p), cfg.filter_core),
        "update_w": _normal(next(keys), (cfg.n_update_layers, 2 * p, p), 2 * p),
        "update_b": jnp.zeros((cfg.n_update_layers, p)),
        "msg_w": _normal(next(keys), (2 * p, p), 2 * p),
        "msg_b": jnp.zeros(p),
        "elec1_w": _normal(next(keys), (p, cfg.feature_dim), p),
        "elec1_b": jnp.zeros(cfg.feature_dim),
        "final_w1": _normal(next(keys), (cfg.feature_dim, p), cfg.feature_dim),
        "final_b1": jnp.zeros(p),
        "final_w2": _normal(next(keys), (p, cfg.feature_dim), p),
        "final_b2": jnp.zeros(cfg.feature_dim),
    }


def nucleus_param_spec(cfg: EmbeddingConfig) -> dict:
    """Shapes of the per-nucleus embedding parameters emitted per structure."""
    return {
        "z_nuc": (cfg.pair_dim,),
        "w_feat": (4, cfg.pair_dim),
        "filt_sigma_raw": (cfg.n_rad,),
        "filt_w1": (3, cfg.filter_hidden),
        "filt_b1": (cfg.filter_hidden,),
    }


def _pair_distances(r: jnp.ndarray):
    """All-pair displacements and distances with a NaN-free zero diagonal."""
    n = r.shape[0]
    diff = r[:, None, :] - r[None, :, :]
    eye = jnp.eye(n, dtype=bool)
    d2 = jnp.sum(jnp.where(eye[..., None], 1.0, diff) ** 2, axis=-1)
    d = jnp.where(eye, 0.0, jnp.sqrt(d2))
    return diff, d


def embed(
    structure: MolecularStructure,
    r: jnp.ndarray,
    params: dict,
    nuc_params: dict,
    cfg: EmbeddingConfig,
) -> jnp.ndarray:
    """Per-electron feature rows (n_elec, feature_dim); same-spin equivariant."""
    n_up = structure.n_up
    n_e = structure.n_elec
    up_mask = jnp.arange(n_e) < n_up  # first n_up rows are spin-up by convention

    # electron-electron initial embeddings
    diff, d = _pair_distances(r)
    safe_d = jnp.where(d > 0, d, 1.0)
    pref = jnp.where(d > 0, jnp.log1p(safe_d) / safe_d, 1.0)
    g_ee = pref[..., None] * jnp.concatenate([diff, d[..., None]], axis=-1)  # (n, n, 4)

    core = params["ee_core"]
    beta_ee = _filter_beta(core, core["sigma"], core["w1"], core["b1"], d[..., None], d)
    same = up_mask[:, None] == up_mask[None, :]  # (n, n)
    term_same = jax.nn.silu(g_ee @ params["ee_w_same"]) * (beta_ee @ params["ee_map_same"])
    term_diff = jax.nn.silu(g_ee @ params["ee_w_diff"]) * (beta_ee @ params["ee_map_diff"])
    summed = jnp.sum(jnp.where(same[..., None], term_same, term_diff), axis=1)
    mu_e = density_normalizer(structure, r, cfg.sigma_norm)  # (n,)
    h0 = (summed / mu_e[:, None]) @ params["ee_w_out"]  # (n, pair_dim)

    # electron-nucleus pair embeddings
    en_diff = r[:, None, :] - structure.positions[None, :, :]  # (n, M, 3)
    en_d = jnp.linalg.norm(en_diff, axis=-1)
    g_en = rescaled_features(r[:, None, :], structure.positions[None, :, :])  # (n, M, 4)
    feat_en = jnp.einsum("imf,mfp->imp", g_en, nuc_params["w_feat"])
    h_en = jax.nn.silu(h0[:, None, :] + nuc_params["z_nuc"][None, :, :] + feat_en)

    # shared per-nucleus filter core, three linear instances
    en_core = {"w_env": params["en_w_env"], "w2": params["en_w2"], "b2": params["en_b2"]}
    sigma = jax.nn.softplus(nuc_params["filt_sigma_raw"])  # (M, n_rad), > 0
    gauss = jnp.exp(-((en_d[..., None] / sigma[None, :, :]) ** 2))
    radial = gauss @ en_core["w_env"]
    direction = (
        jax.nn.silu(jnp.einsum("imx,mxh->imh", en_diff, nuc_params["filt_w1"]) + nuc_params["filt_b1"])
        @ en_core["w2"]
        + en_core["b2"]
    )
    beta_en = radial * direction  # (n, M, core_dim)
    gamma_nuc = beta_en @ params["map_nuc"]
    gamma_elec = beta_en @ params["map_elec"]
    gamma_diff = beta_en @ params["map_diff"]

    # aggregate to nuclei per spin and to electrons
    mu_n = density_normalizer(structure, structure.positions, cfg.sigma_norm)  # (M,)
    weighted = h_en * gamma_nuc  # (n, M, pair)
    h_nuc_up = jnp.sum(jnp.where(up_mask[:, None, None], weighted, 0.0), axis=0) / mu_n[:, None]
    h_nuc_dn = jnp.sum(jnp.where(up_mask[:, None, None], 0.0, weighted), axis=0) / mu_n[:, None]
    m1 = jnp.sum(h_en * gamma_elec, axis=1) / mu_e[:, None]
    h1 = jax.nn.silu(m1 @ params["elec1_w"] + params["elec1_b"])  # (n, feature_dim)

    # nucleus update layers with opposite-spin context, simultaneous update
    for l in range(cfg.n_update_layers):
        w, b = params["update_w"][l], params["update_b"][l]
        new_up = h_nuc_up + jax.nn.silu(jnp.concatenate([h_nuc_up, h_nuc_dn], -1) @ w + b)
        new_dn = h_nuc_dn + jax.nn.silu(jnp.concatenate([h_nuc_dn, h_nuc_up], -1) @ w + b)
        h_nuc_up, h_nuc_dn = new_up, new_dn

    # diffusion back to the electrons
    msg_up = jax.nn.silu(jnp.concatenate([h_nuc_up, h_nuc_dn], -1) @ params["msg_w"] + params["msg_b"])
    msg_dn = jax.nn.silu(jnp.concatenate([h_nuc_dn, h_nuc_up], -1) @ params["msg_w"] + params["msg_b"])
    msg = jnp.where(up_mask[:, None, None], msg_up[None, :, :], msg_dn[None, :, :])
    m_l = jnp.sum(msg * gamma_diff, axis=1) / mu_e[:, None]  # (n, pair)

    inner = jax.nn.silu(h1 @ params["final_w1"] + m_l + params["final_b1"])
    return jax.nn.silu(inner @ params["final_w2"] + params["final_b2"]) + h1
