"""Per-structure parameter generation from a graph network over nuclei.

One shared network maps a molecular structure (nuclear charges and canonical
coordinates) to the complete per-structure parameter set of the wave function:
orbital readout weights, envelope decays and mixings, pairing-matrix blocks,
spin tables, Jastrow weights, and the per-nucleus pieces of the electron
embedding.  Every emitted tensor is a learned delta added to a learnable
charge-indexed default, so a freshly initialized network reproduces the
defaults exactly (all head output layers start at zero).

Structures are canonicalized to an equivariant coordinate frame before the
network runs; direction-carrying outputs are rotated back to the lab frame so
the resulting wave function transforms rigidly with the molecule.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from .embedding import EmbeddingConfig
from .errors import ConfigurationError
from .system import MolecularStructure

# minimal per-nucleus orbital counts by charge (row-capacity for the heaviest
# spin channel of any molecule built from these elements)
N_ORB_BY_CHARGE = {1: 2, 2: 2, 3: 6, 4: 6, 5: 7, 6: 7, 7: 8, 8: 8, 9: 10, 10: 10}


@dataclass(frozen=True)
class MetaConfig:
    embedding_dim: int = 32
    message_dim: int = 16
    n_layers: int = 2
    head_bottleneck: int = 8
    filter_hidden: int = 16
    filter_core: int = 8
    n_freq: int = 8  # Bessel radial basis size
    cutoff: float = 10.0  # bohr
    sigma_norm: float = 1.0  # bohr, neighbor-count normalization length
    supported_charges: tuple[int, ...] = (1, 2, 3)
    n_env_per_nuc: int = 4
    n_k: int = 2  # Pfaffian terms in the linear combination
    n_s: int = 3  # spin-difference table rows
    jastrow_hidden: int = 16
    jastrow_layers: int = 2  # weight layers in the per-electron MLP
    embed: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    @property
    def n_orb_max(self) -> int:
        return max(N_ORB_BY_CHARGE[z] for z in self.supported_charges)

    def n_orb(self, z: int) -> int:
        return N_ORB_BY_CHARGE[z]

    def charge_index(self, z: int) -> int:
        try:
            return self.supported_charges.index(z)
        except ValueError:
            raise ConfigurationError(f"unsupported nuclear charge {z}") from None

    def validate(self) -> None:
        for z in self.supported_charges:
            if z not in N_ORB_BY_CHARGE:
                raise ConfigurationError(f"no orbital count configured for charge {z}")
        self.embed.validate()


@dataclass(frozen=True)
class Frame:
    """Rigid map x -> rotation @ (x - origin) into the canonical frame."""

    rotation: jnp.ndarray  # (3, 3), rows are the canonical axes
    origin: jnp.ndarray  # (3,)


def canonical_frame(structure: MolecularStructure) -> tuple[MolecularStructure, Frame]:
    """Deterministic rotation/translation removing rigid-motion freedom.

    Center: charge-weighted centroid.  Axes: eigenvectors of the
    charge-weighted coordinate covariance, descending eigenvalue order, each
    sign fixed so the nucleus with the largest |projection| projects
    nonnegatively (ties resolved by lowest nucleus index).  Reflections are
    not canonicalized: a mirrored input may land in a different frame.
    """
    pos = structure.positions
    z = jnp.asarray(structure.charges, dtype=jnp.float64)
    origin = jnp.sum(z[:, None] * pos, axis=0) / jnp.sum(z)
    centered = pos - origin
    cov = (z[:, None] * centered).T @ centered / jnp.sum(z)
    eigval, eigvec = jnp.linalg.eigh(cov)  # ascending
    order = jnp.argsort(-eigval)  # stable: ties keep eigh's order (zero cov -> identity)
    axes = eigvec[:, order].T  # (3, 3) rows, descending eigenvalue
    proj = centered @ axes.T  # (Nn, 3)
    absp = jnp.abs(proj)
    # lowest-index nucleus among the near-maximal |projections|; the slack keeps
    # the pick stable when symmetry makes the maximum a rounding-level tie
    thresh = jnp.max(absp, axis=0) * (1.0 - 1e-9) - 1e-12
    pick = jnp.argmax(absp >= thresh, axis=0)
    signs = jnp.sign(proj[pick, jnp.arange(3)])
    signs = jnp.where(signs == 0, 1.0, signs)
    rotation = signs[:, None] * axes
    canon = structure.replace_positions(centered @ rotation.T)
    return canon, Frame(rotation, origin)


def _softplus_inv(y: np.ndarray | float) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def _glu_init(key, d_in: int, d_out: int) -> dict:
    ka, kb = jax.random.split(key)
    s = 1.0 / math.sqrt(d_in)
    return {
        "ln_g": jnp.ones(d_in),
        "ln_b": jnp.zeros(d_in),
        "wa": s * jax.random.normal(ka, (d_in, d_out), dtype=jnp.float64),
        "ba": jnp.zeros(d_out),
        "wb": s * jax.random.normal(kb, (d_in, d_out), dtype=jnp.float64),
        "bb": jnp.zeros(d_out),
    }


def _glu(p: dict, x: jnp.ndarray) -> jnp.ndarray:
    mean = jnp.mean(x, axis=-1, keepdims=True)
    var = jnp.var(x, axis=-1, keepdims=True)
    xn = (x - mean) / jnp.sqrt(var + 1e-6) * p["ln_g"] + p["ln_b"]
    return (xn @ p["wa"] + p["ba"]) * jax.nn.sigmoid(xn @ p["wb"] + p["bb"])


def _head_init(key, d_in: int, bottleneck: int, size: int) -> dict:
    # output layer starts at zero so the emitted delta vanishes at init
    p = _glu_init(key, d_in, bottleneck)
    p["w_out"] = jnp.zeros((bottleneck, size))
    p["b_out"] = jnp.zeros(size)
    return p


def _head(p: dict, x: jnp.ndarray) -> jnp.ndarray:
    return _glu(p, x) @ p["w_out"] + p["b_out"]


def _jastrow_dims(cfg: MetaConfig) -> tuple[int, ...]:
    nf, nh, nl = cfg.embed.feature_dim, cfg.jastrow_hidden, cfg.jastrow_layers
    return (nf,) + (nh,) * (nl - 1) + (1,)


def _jastrow_sizes(cfg: MetaConfig) -> tuple[int, ...]:
    d = _jastrow_dims(cfg)
    sizes: list[int] = []
    for i in range(len(d) - 1):
        sizes += [d[i] * d[i + 1], d[i + 1]]
    return tuple(sizes)


def _unflatten_jastrow(flat: jnp.ndarray, cfg: MetaConfig) -> dict:
    d = _jastrow_dims(cfg)
    o = np.cumsum((0,) + _jastrow_sizes(cfg))
    out = {}
    for i in range(len(d) - 1):
        out[f"w{i + 1}"] = flat[o[2 * i]:o[2 * i + 1]].reshape(d[i], d[i + 1])
        out[f"b{i + 1}"] = flat[o[2 * i + 1]:o[2 * i + 2]]
    return out


def _node_family_sizes(cfg: MetaConfig) -> dict:
    e = cfg.embed
    no, nv, k, ns = cfg.n_orb_max, cfg.n_env_per_nuc, cfg.n_k, cfg.n_s
    return {
        "w": (k, 2, no, e.feature_dim),
        "sigma_raw": (k, 2, nv),
        "eta": (k, 2, ns, no),
        "odd_w": (k, e.feature_dim),
        "odd_pi": (k, nv),
        "odd_eta": (k, ns),
        "z_nuc": (e.pair_dim,),
        "w_feat": (4, e.pair_dim),
        "filt_sigma_raw": (e.n_rad,),
        "filt_w1": (3, e.filter_hidden),
        "filt_b1": (e.filter_hidden,),
    }


def _edge_family_sizes(cfg: MetaConfig) -> dict:
    no, nv, k = cfg.n_orb_max, cfg.n_env_per_nuc, cfg.n_k
    return {"pi": (k, 2, nv, no), "a_raw": (k, no, no)}


def _pooled_family_sizes(cfg: MetaConfig) -> dict:
    return {"c": (cfg.n_k,), "jastrow_flat": (sum(_jastrow_sizes(cfg)),), "cusp": (4,)}


def _charge_defaults(key, cfg: MetaConfig) -> dict:
    """Learnable per-charge default tensors; the network emits deltas on these."""
    e = cfg.embed
    nc = len(cfg.supported_charges)
    no, nv, k, ns = cfg.n_orb_max, cfg.n_env_per_nuc, cfg.n_k, cfg.n_s
    rng = np.random.default_rng(np.asarray(jax.random.key_data(key))[-1])

    sigma_spread = _softplus_inv(np.linspace(0.5, 2.0, nv))
    pi_self = np.zeros((nc, k, 2, nv, no))
    for i in range(no):
        pi_self[..., i % nv, i] = 1.0
    odd_pi = np.zeros((nc, k, nv))
    odd_pi[..., min(1, nv - 1)] = 1.0  # unit-decay envelope at init

    tilde = np.kron(np.eye(no // 2), [[0.0, 1.0], [-1.0, 0.0]])
    if no % 2 == 1:
        tilde = np.block([[tilde, np.zeros((no - 1, 1))], [np.zeros((1, no))]])
    a_self = np.broadcast_to(tilde, (nc, k, no, no)) + 1e-2 * rng.standard_normal((nc, k, no, no))
    a_cross = 1e-2 * rng.standard_normal((nc, nc, k, no, no))

    jdims = _jastrow_dims(cfg)
    jflat = np.concatenate([
        part
        for i in range(len(jdims) - 1)
        for part in (
            rng.standard_normal(jdims[i] * jdims[i + 1]) / math.sqrt(jdims[i]),
            np.zeros(jdims[i + 1]),
        )
    ])
    asarray = lambda x: jnp.asarray(x, dtype=jnp.float64)
    return {
        "w": asarray(rng.standard_normal((nc, k, 2, no, e.feature_dim)) / math.sqrt(e.feature_dim)),
        "sigma_raw": asarray(np.broadcast_to(sigma_spread, (nc, k, 2, nv)).copy()),
        "eta": jnp.ones((nc, k, 2, ns, no)),
        "odd_w": asarray(rng.standard_normal((nc, k, e.feature_dim)) / math.sqrt(e.feature_dim)),
        "odd_pi": asarray(odd_pi),
        "odd_eta": jnp.ones((nc, k, ns)),
        "z_nuc": asarray(0.5 * rng.standard_normal((nc, e.pair_dim))),
        "w_feat": asarray(rng.standard_normal((nc, 4, e.pair_dim)) / 2.0),
        "filt_sigma_raw": asarray(
            np.broadcast_to(_softplus_inv(np.geomspace(0.5, 5.0, e.n_rad)), (nc, e.n_rad)).copy()
        ),
        "filt_w1": asarray(rng.standard_normal((nc, 3, e.filter_hidden)) / math.sqrt(3.0)),
        "filt_b1": jnp.zeros((nc, e.filter_hidden)),
        "pi_self": asarray(pi_self),
        "pi_cross": jnp.zeros((nc, nc, k, 2, nv, no)),
        "a_self": asarray(a_self),
        "a_cross": asarray(a_cross),
        "c": jnp.ones(cfg.n_k),
        "jastrow_flat": asarray(jflat),
        "cusp": jnp.asarray([1.0, 1.0, float(_softplus_inv(1.0)), float(_softplus_inv(1.0))]),
    }


def init_meta_params(key, cfg: MetaConfig) -> dict:
    """All trainable weights of the parameter generator."""
    cfg.validate()
    d, msg = cfg.embedding_dim, cfg.message_dim
    keys = jax.random.split(key, 12 + 3 * cfg.n_layers)
    ki = iter(keys)
    layers = []
    for _ in range(cfg.n_layers):
        layers.append({
            "msg_glu": _glu_init(next(ki), 2 * d, msg),
            "upd_glu": _glu_init(next(ki), d + msg, d),
            "w_filter": jax.random.normal(next(ki), (cfg.filter_core, msg), dtype=jnp.float64)
            / math.sqrt(cfg.filter_core),
        })
    filt = {
        "freqs": jnp.arange(1, cfg.n_freq + 1, dtype=jnp.float64) * jnp.pi,
        "env_sigma": jnp.asarray(np.geomspace(1.0, cfg.cutoff, cfg.n_freq)),
        "w_env": jax.random.normal(next(ki), (cfg.n_freq, cfg.filter_core), dtype=jnp.float64)
        / math.sqrt(cfg.n_freq),
        "w1": jax.random.normal(next(ki), (3, cfg.filter_hidden), dtype=jnp.float64) / math.sqrt(3.0),
        "b1": jnp.zeros(cfg.filter_hidden),
        "w2": jax.random.normal(next(ki), (cfg.filter_hidden, cfg.filter_core), dtype=jnp.float64)
        / math.sqrt(cfg.filter_hidden),
        "b2": jnp.zeros(cfg.filter_core),
    }
    hb = cfg.head_bottleneck
    node_heads = {
        name: _head_init(k2, d, hb, int(np.prod(shape)))
        for (name, shape), k2 in zip(
            _node_family_sizes(cfg).items(), jax.random.split(next(ki), len(_node_family_sizes(cfg)))
        )
    }
    edge_heads = {
        name: _head_init(k2, 2 * d, hb, int(np.prod(shape)))
        for (name, shape), k2 in zip(
            _edge_family_sizes(cfg).items(), jax.random.split(next(ki), len(_edge_family_sizes(cfg)))
        )
    }
    pooled_heads = {
        name: _head_init(k2, d, hb, int(np.prod(shape)))
        for (name, shape), k2 in zip(
            _pooled_family_sizes(cfg).items(), jax.random.split(next(ki), len(_pooled_family_sizes(cfg)))
        )
    }
    return {
        "charge_embed": jax.random.normal(
            next(ki), (len(cfg.supported_charges), d), dtype=jnp.float64
        ),
        "layers": layers,
        "filter": filt,
        "trunk": _glu_init(next(ki), d, d),
        "node_heads": node_heads,
        "edge_heads": edge_heads,
        "pooled_heads": pooled_heads,
        "defaults": _charge_defaults(next(ki), cfg),
    }


def _bessel_filter(filt: dict, c: float, diff: jnp.ndarray, w_map: jnp.ndarray) -> jnp.ndarray:
    """Gamma(x): Bessel radial basis times Gaussian envelope times direction net."""
    d2 = jnp.sum(diff * diff, axis=-1)
    d = jnp.sqrt(jnp.where(d2 > 0, d2, 1.0))
    radial_pos = jnp.sin(filt["freqs"] * d[..., None] / c) / d[..., None]
    radial = jnp.where(d2[..., None] > 0, radial_pos, filt["freqs"] / c)  # sinc limit at x = 0
    radial = radial * jnp.sqrt(2.0 / c) * jnp.exp(-(d2[..., None] / filt["env_sigma"] ** 2))
    core = (radial @ filt["w_env"]) * (
        jax.nn.silu(diff @ filt["w1"] + filt["b1"]) @ filt["w2"] + filt["b2"]
    )
    return core @ w_map


def _run_gnn(weights: dict, cfg: MetaConfig, positions: jnp.ndarray, charge_idx: list[int]):
    """Message passing over nuclei in canonical coordinates; returns trunk features."""
    d2 = jnp.sum((positions[:, None, :] - positions[None, :, :]) ** 2, axis=-1)
    nu = jnp.sum(jnp.exp(-d2 / cfg.sigma_norm**2), axis=1) + 1.0  # self-edge counted, so >= 2
    diff = positions[:, None, :] - positions[None, :, :]

    k = weights["charge_embed"][jnp.asarray(charge_idx)]
    for layer in weights["layers"]:
        pair = jnp.concatenate(
            [jnp.repeat(k[:, None, :], k.shape[0], 1), jnp.repeat(k[None, :, :], k.shape[0], 0)], -1
        )
        gamma = _bessel_filter(weights["filter"], cfg.cutoff, diff, layer["w_filter"])
        t = jnp.sum(_glu(layer["msg_glu"], pair) * gamma, axis=1) / nu[:, None]
        k = _glu(layer["upd_glu"], jnp.concatenate([k, t], axis=-1))
    return _glu(weights["trunk"], k)


def generate_params(structure: MolecularStructure, weights: dict, cfg: MetaConfig) -> dict:
    """Emit the per-structure parameter set consumed by the wave function."""
    for z in structure.charges:
        cfg.charge_index(z)  # raises ConfigurationError for unsupported charges
    canon, frame = canonical_frame(structure)
    idx = [cfg.charge_index(z) for z in structure.charges]
    n_orb = [cfg.n_orb(z) for z in structure.charges]
    trunk = _run_gnn(weights, cfg, canon.positions, idx)

    defaults = weights["defaults"]
    sizes = _node_family_sizes(cfg)
    node_out = {
        name: _head(weights["node_heads"][name], trunk).reshape((len(idx),) + sizes[name])
        + defaults[name][jnp.asarray(idx)]
        for name in sizes
    }

    # direction-carrying outputs are emitted in the canonical frame; rotate back
    rot_t = frame.rotation.T
    filt_w1 = jnp.einsum("xy,myh->mxh", rot_t, node_out["filt_w1"])
    w_feat = jnp.concatenate(
        [jnp.einsum("xy,myp->mxp", rot_t, node_out["w_feat"][:, :3]), node_out["w_feat"][:, 3:]], 1
    )

    # assemble ragged per-nucleus blocks into structure-wide tensors
    w = jnp.concatenate([node_out["w"][m, :, :, : n_orb[m]] for m in range(len(idx))], axis=2)
    eta = jnp.concatenate([node_out["eta"][m, ..., : n_orb[m]] for m in range(len(idx))], axis=-1)
    sigma_raw = jnp.concatenate([node_out["sigma_raw"][m] for m in range(len(idx))], axis=-1)

    esizes = _edge_family_sizes(cfg)
    pi_rows, a_rows = [], []
    for m in range(len(idx)):
        pi_row, a_row = [], []
        for n in range(len(idx)):
            feat = jnp.concatenate([trunk[m], trunk[n]])
            pi_blk = _head(weights["edge_heads"]["pi"], feat).reshape(esizes["pi"])
            a_blk = _head(weights["edge_heads"]["a_raw"], feat).reshape(esizes["a_raw"])
            if m == n:
                pi_blk = pi_blk + defaults["pi_self"][idx[m]]
                a_blk = a_blk + defaults["a_self"][idx[m]]
            else:
                pi_blk = pi_blk + defaults["pi_cross"][idx[m], idx[n]]
                a_blk = a_blk + defaults["a_cross"][idx[m], idx[n]]
            pi_row.append(pi_blk[..., : n_orb[n]])
            a_row.append(a_blk[..., : n_orb[m], : n_orb[n]])
        pi_rows.append(jnp.concatenate(pi_row, axis=-1))
        a_rows.append(jnp.concatenate(a_row, axis=-1))
    pi = jnp.concatenate(pi_rows, axis=-2)  # (k, 2, N_env, N_o)
    a_hat = jnp.concatenate(a_rows, axis=-2)  # (k, N_o, N_o)
    a = 0.5 * (a_hat - jnp.swapaxes(a_hat, -1, -2))

    pooled = jnp.mean(trunk, axis=0)
    psizes = _pooled_family_sizes(cfg)
    pooled_out = {
        name: _head(weights["pooled_heads"][name], pooled).reshape(psizes[name]) + defaults[name]
        for name in psizes
    }
    jas = _unflatten_jastrow(pooled_out["jastrow_flat"], cfg)
    jas.update(
        beta_par=pooled_out["cusp"][0],
        beta_anti=pooled_out["cusp"][1],
        alpha_par_raw=pooled_out["cusp"][2],
        alpha_anti_raw=pooled_out["cusp"][3],
    )

    return {
        "orbitals": {
            "w": w,
            "sigma_raw": sigma_raw,
            "pi": pi,
            "eta": eta,
            "a": a,
            "c": pooled_out["c"],
            "odd_w": node_out["odd_w"].transpose(1, 0, 2),
            "odd_pi": node_out["odd_pi"].transpose(1, 0, 2),
            "odd_eta": node_out["odd_eta"].transpose(1, 0, 2),
        },
        "jastrow": jas,
        "nuclei": {
            "z_nuc": node_out["z_nuc"],
            "w_feat": w_feat,
            "filt_sigma_raw": node_out["filt_sigma_raw"],
            "filt_w1": filt_w1,
            "filt_b1": node_out["filt_b1"],
        },
    }


def structure_fingerprint(structure: MolecularStructure) -> int:
    """Stable tag identifying the originating structure of a parameter set."""
    pos = np.asarray(structure.positions, dtype=np.float64)
    key = (structure.charges, structure.n_up, structure.n_down, pos.round(12).tobytes())
    return int.from_bytes(hashlib.sha256(repr(key).encode()).digest()[:8], "big")


@dataclass(frozen=True)
class ParamSet:
    """Per-structure parameter tensors tagged with the originating structure."""

    tensors: dict
    structure_hash: int


def emit_param_set(structure: MolecularStructure, weights: dict, cfg: MetaConfig) -> ParamSet:
    """generate_params plus the structure tag, for callers outside jit."""
    return ParamSet(generate_params(structure, weights, cfg), structure_fingerprint(structure))
