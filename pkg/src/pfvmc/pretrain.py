"""Hartree-Fock-matched pretraining from exported reference bundles.

The neural orbitals are pulled toward the reference molecular orbitals before
energy optimization: an orbital term matches the orbital matrix against the
zero-padded reference up to a rotation T in SO(N_o), and a geminal term
matches the pair matrix against the reference geminal built with a
skew-orthogonal A_HF.  T and A_HF are per-structure (and per Pfaffian term)
auxiliary variables, parametrized through Cayley transforms and optimized in
an inner loop between outer network updates.

Reference bundles (basis shells with normalization folded into the
coefficients, occupied MO coefficient matrices per spin, probe values) are
consumed from JSON files produced by a separate Hartree-Fock exporter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .ansatz import logpsi, orbital_components, slater_logpsi_baseline
from .errors import (
    ConfigurationError,
    DimensionError,
    InvalidInputError,
    MissingReferenceError,
)
from .metagnn import MetaConfig, generate_params, structure_fingerprint
from .sampler import WalkerSet, init_walkers, mh_sweeps
from .skewlin import SignLogValue, pfaffian_signlog, skew_identity
from .system import MolecularStructure, structure_from_dict


@dataclass(frozen=True)
class GTOShell:
    center_index: int
    l: int
    exponents: tuple[float, ...]
    coefficients: tuple[float, ...]  # primitive normalization folded in


@dataclass(frozen=True)
class HFReference:
    structure: MolecularStructure
    shells: tuple[GTOShell, ...]
    mo_up: np.ndarray  # (n_ao, n_occ_up)
    mo_down: np.ndarray  # (n_ao, n_occ_down)
    energy: float
    probe_points: np.ndarray
    probe_up: np.ndarray
    probe_down: np.ndarray


def load_hf_reference(path: str | Path) -> HFReference:
    """Read an exported reference bundle; raises if absent or malformed."""
    path = Path(path)
    if not path.exists():
        raise MissingReferenceError(f"reference bundle not found: {path}")
    try:
        data = json.loads(path.read_text())
        structure = structure_from_dict(data["structure"])
        shells = tuple(
            GTOShell(
                int(sh["center_index"]),
                int(sh["l"]),
                tuple(float(e) for e in sh["exponents"]),
                tuple(float(c) for c in sh["coefficients"]),
            )
            for sh in data["shells"]
        )
        ref = HFReference(
            structure,
            shells,
            np.asarray(data["mo_coeff_up"], dtype=np.float64),
            np.asarray(data["mo_coeff_down"], dtype=np.float64),
            float(data["hf_energy_hartree"]),
            np.asarray(data["probe"]["points_bohr"], dtype=np.float64),
            np.asarray(data["probe"]["mo_values_up"], dtype=np.float64),
            np.asarray(data["probe"]["mo_values_down"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed reference bundle {path}: {exc}") from exc
    if ref.mo_up.shape[1] != structure.n_up or ref.mo_down.shape[1] != structure.n_down:
        raise InvalidInputError("MO counts do not match the structure's spin occupation")
    return ref


def eval_gto_aos(shells, centers: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Cartesian contracted GTO values, (n_points, n_ao); p columns ordered x,y,z."""
    points = np.asarray(points, dtype=np.float64)
    cols = []
    for sh in shells:
        if sh.l > 1:
            raise InvalidInputError(f"unsupported angular momentum l={sh.l}")
        diff = points - np.asarray(centers)[sh.center_index]
        d2 = np.sum(diff * diff, axis=1)
        alphas = np.asarray(sh.exponents)
        coefs = np.asarray(sh.coefficients)
        radial = np.exp(-d2[:, None] * alphas) @ coefs  # (n_points,)
        if sh.l == 0:
            cols.append(radial[:, None])
        else:
            cols.append(diff * radial[:, None])
    return np.concatenate(cols, axis=1)


def eval_gto_mos(ref: HFReference, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Occupied MO values per spin at the given points: (n_pts, n_up), (n_pts, n_down)."""
    centers = np.asarray(ref.structure.positions)
    ao = eval_gto_aos(ref.shells, centers, points)
    return ao @ ref.mo_up, ao @ ref.mo_down


def pad_hf_orbitals(phi_hf: np.ndarray, n_o: int) -> np.ndarray:
    """Right-pad MO columns with zeros to the neural orbital width."""
    phi_hf = np.asarray(phi_hf, dtype=np.float64)
    n_occ = phi_hf.shape[-1]
    if n_o < n_occ:
        raise DimensionError(f"cannot pad {n_occ} orbitals down to {n_o}")
    pad = [(0, 0)] * (phi_hf.ndim - 1) + [(0, n_o - n_occ)]
    return np.pad(phi_hf, pad)


def extended_slater_matrix(ref: HFReference, r: np.ndarray) -> np.ndarray:
    """Square (Ne, Ne) spin-blocked orbital matrix whose det is the HF wave function."""
    s = ref.structure
    up, down = eval_gto_mos(ref, np.asarray(r).reshape(-1, 3))
    full = np.zeros((s.n_elec, s.n_elec))
    full[: s.n_up, : s.n_up] = up[: s.n_up]
    full[s.n_up :, s.n_up :] = down[s.n_up :]
    return full


def _augment_odd(phi_full: np.ndarray) -> np.ndarray:
    """Phantom electron/orbital at the last slot; determinant is unchanged."""
    n = phi_full.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = phi_full
    out[n, n] = 1.0
    return out


def hf_equivalence_check(
    phi_full: np.ndarray, a_hf: np.ndarray, n_o: int, baseline: np.ndarray | None = None
) -> dict:
    """Verify (1/Pf(A_bar)) Pf(Phi_bar A_bar Phi_bar^T) equals det(phi_full).

    phi_full is the square spin-blocked orbital matrix; a_hf a skew matrix of
    size Ne (even systems) or Ne+1 (odd systems, phantom slot included).
    Phi_bar zero-pads to width n_o and A_bar block-extends a_hf with the skew
    identity.  Returns the relative deviation; this is the identity the
    pretraining geminal construction relies on.  A separate baseline matrix
    may be given to confirm the check rejects mismatched orbitals.
    """
    phi_full = np.asarray(phi_full, dtype=np.float64)
    if phi_full.shape[0] != phi_full.shape[1]:
        raise DimensionError(f"square orbital matrix required, got {phi_full.shape}")
    base = phi_full if baseline is None else np.asarray(baseline, dtype=np.float64)
    if phi_full.shape[0] % 2 == 1:
        # the phantom slot occupies one padded column; the width N_o (even,
        # two or more orbitals per nucleus) already has room for it
        phi_full = _augment_odd(phi_full)
        base = _augment_odd(base)
    n_e = phi_full.shape[0]
    if a_hf.shape != (n_e, n_e):
        raise DimensionError(f"pairing matrix must be {(n_e, n_e)}, got {a_hf.shape}")

    phi_bar = pad_hf_orbitals(phi_full, n_o)
    a_bar = np.zeros((n_o, n_o))
    a_bar[:n_e, :n_e] = a_hf
    if n_o > n_e:
        a_bar[n_e:, n_e:] = skew_identity(n_o - n_e)

    num = pfaffian_signlog(phi_bar @ a_bar @ phi_bar.T)
    den = pfaffian_signlog(a_bar)
    det = slater_logpsi_baseline(jnp.asarray(base))
    det = SignLogValue(float(det.sign), float(det.log_abs))

    lhs_sign = num.sign * den.sign
    lhs_log = num.log_abs - den.log_abs
    if det.sign == 0 or lhs_sign == 0:
        rel = 0.0 if det.sign == lhs_sign else np.inf
    else:
        rel = abs(lhs_sign * np.exp(lhs_log - det.log_abs) - det.sign)
    return {"rel_error": float(rel), "ok": bool(rel < 1e-9)}


# --- Cayley parametrizations (traced versions of the exact-arithmetic ones) ---


def cayley_so_jnp(raw: jnp.ndarray) -> jnp.ndarray:
    n = raw.shape[-1]
    t_hat = 0.5 * (raw - jnp.swapaxes(raw, -1, -2))
    eye = jnp.eye(n, dtype=raw.dtype)
    t_bar = jnp.linalg.solve(t_hat - eye, t_hat + eye)
    return t_bar @ t_bar


def cayley_skew_orthogonal_jnp(raw: jnp.ndarray) -> jnp.ndarray:
    n = raw.shape[-1]
    t = cayley_so_jnp(raw)
    a = t @ jnp.asarray(skew_identity(n)) @ jnp.swapaxes(t, -1, -2)
    return 0.5 * (a - jnp.swapaxes(a, -1, -2))


def pretrain_losses(
    phi_hat: jnp.ndarray,  # (n_w, Ne, N_o) neural orbital matrices, one Pfaffian term
    a_pf: jnp.ndarray,  # (N_o, N_o) skew
    phi_bar_hf: jnp.ndarray,  # (n_w, Ne, N_o) zero-padded reference
    t_rot: jnp.ndarray,  # (N_o, N_o) in SO(N_o)
    a_hf: jnp.ndarray,  # (Ne, Ne) skew
    alpha: float = 1.0,
    beta: float = 1e-4,
) -> jnp.ndarray:
    """alpha |Phi - Phi_bar T|^2 + beta |Phi A Phi^T - Phi_HF A_HF Phi_HF^T|^2,
    Frobenius norms averaged over walkers; the reference geminal uses the
    unpadded columns of phi_bar_hf."""
    n_e = phi_hat.shape[-2]
    orb = phi_hat - phi_bar_hf @ t_rot
    l_orb = jnp.mean(jnp.sum(orb * orb, axis=(-1, -2)))
    gem_n = jnp.einsum("wio,op,wjp->wij", phi_hat, a_pf, phi_hat)
    phi_hf = phi_bar_hf[..., :n_e]
    gem_r = jnp.einsum("wio,op,wjp->wij", phi_hf, a_hf, phi_hf)
    diff = gem_n - gem_r
    l_gem = jnp.mean(jnp.sum(diff * diff, axis=(-1, -2)))
    return alpha * l_orb + beta * l_gem


def _odd_term_loss(phi_hat_k, phi_odd_k, a_k, phi_bar, phi_full, t_rot, a_aug, alpha, beta):
    """Odd-count variant: the pair matrix gains a border column phi_odd and the
    reference gains a phantom slot, so the targets are the blocks of
    B A_aug B^T with B = blockdiag(phi_full, 1).  The border is matched at
    orbital weight as well; at beta alone it barely moves."""
    n_e = phi_full.shape[-1]
    orb = phi_hat_k - phi_bar @ t_rot
    l_orb = jnp.mean(jnp.sum(orb * orb, axis=(-1, -2)))
    border_t = jnp.einsum("wij,j->wi", phi_full, a_aug[:n_e, n_e])
    bord = phi_odd_k - border_t
    l_border = jnp.mean(jnp.sum(bord * bord, axis=-1))
    gem_n = jnp.einsum("wio,op,wjp->wij", phi_hat_k, a_k, phi_hat_k)
    core_t = jnp.einsum("wio,op,wjp->wij", phi_full, a_aug[:n_e, :n_e], phi_full)
    core = gem_n - core_t
    l_gem = jnp.mean(jnp.sum(core * core, axis=(-1, -2)) + 2.0 * jnp.sum(bord * bord, axis=-1))
    return alpha * (l_orb + l_border) + beta * l_gem


def _structure_loss(raws, phi_hat, phi_odd, a, phi_bar, phi_full, alpha, beta):
    """Mean over Pfaffian terms of the matching loss; raws hold per-term Cayley
    raw parameters {"t_raw": (k, N_o, N_o), "a_raw": (k, n_a, n_a)}."""
    losses = []
    for k in range(a.shape[0]):
        t_rot = cayley_so_jnp(raws["t_raw"][k])
        a_hf = cayley_skew_orthogonal_jnp(raws["a_raw"][k])
        if phi_odd is None:
            losses.append(pretrain_losses(phi_hat[:, k], a[k], phi_bar, t_rot, a_hf, alpha, beta))
        else:
            losses.append(
                _odd_term_loss(
                    phi_hat[:, k], phi_odd[:, k], a[k], phi_bar, phi_full, t_rot, a_hf, alpha, beta
                )
            )
    return jnp.mean(jnp.stack(losses))


# --- plain adaptive-moment gradient rule, shared by inner and outer loops ---


def adam_init(params) -> dict:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return {"m": zeros, "v": jax.tree_util.tree_map(jnp.zeros_like, params), "t": jnp.zeros(())}


def adam_update(params, grads, state: dict, lr, b1=0.9, b2=0.999, eps=1e-8):
    t = state["t"] + 1.0
    m = jax.tree_util.tree_map(lambda a, g: b1 * a + (1 - b1) * g, state["m"], grads)
    v = jax.tree_util.tree_map(lambda a, g: b2 * a + (1 - b2) * g * g, state["v"], grads)
    corr = lr * jnp.sqrt(1 - b2**t) / (1 - b1**t)
    new = jax.tree_util.tree_map(
        lambda p, mm, vv: p - corr * mm / (jnp.sqrt(vv) + eps), params, m, v
    )
    return new, {"m": m, "v": v, "t": t}


_adam_update_jit = jax.jit(adam_update)


def hf_targets(ref: HFReference, positions, n_o: int) -> tuple[jnp.ndarray, jnp.ndarray]:
    """Reference matrices at walker positions: phi_full (n_w, Ne, Ne) spin-blocked
    and its zero-padded form (n_w, Ne, N_o)."""
    pos = np.asarray(positions, dtype=np.float64)
    n_w, n_e = pos.shape[0], pos.shape[1]
    up, down = eval_gto_mos(ref, pos.reshape(-1, 3))
    s = ref.structure
    full = np.zeros((n_w, n_e, n_e))
    full[:, : s.n_up, : s.n_up] = up.reshape(n_w, n_e, -1)[:, : s.n_up]
    if s.n_down:
        full[:, s.n_up :, s.n_up :] = down.reshape(n_w, n_e, -1)[:, s.n_up :]
    return jnp.asarray(full), jnp.asarray(pad_hf_orbitals(full, n_o))


class PretrainKernels(NamedTuple):
    """Compiled per-structure functions for the alternating pretraining loop."""

    sample: Callable  # (params, walkers) -> (walkers, acceptance)
    matrices: Callable  # (params, positions) -> (phi_hat, phi_odd, a_pf)
    inner: Callable  # (raws, adam, matrices..., targets...) -> (raws, adam, loss trace)
    outer: Callable  # (params, raws, positions, targets...) -> (loss, grads)


def make_pretrain_kernels(
    structure: MolecularStructure,
    cfg: MetaConfig,
    n_sweeps: int = 5,
    n_inner: int = 50,
    inner_lr: float = 0.02,
    alpha: float = 1.0,
    beta: float = 1e-4,
) -> PretrainKernels:
    def field(params):
        theta = generate_params(structure, params["meta"], cfg)
        return lambda r: logpsi(structure, r, params["embed"], theta, cfg.embed)

    def sample(params, walkers: WalkerSet):
        return mh_sweeps(field(params), walkers, n_sweeps)

    def matrices(params, positions):
        theta = generate_params(structure, params["meta"], cfg)

        def comp(r):
            phi_hat, phi_odd, _ = orbital_components(
                structure, r, params["embed"], theta, cfg.embed
            )
            return phi_hat, phi_odd

        phi_hat, phi_odd = jax.vmap(comp)(positions)
        return phi_hat, phi_odd, theta["orbitals"]["a"]

    def inner(raws, adam, phi_hat, phi_odd, a, phi_bar, phi_full):
        def step(carry, _):
            rw, ad = carry
            loss, g = jax.value_and_grad(
                lambda r: _structure_loss(r, phi_hat, phi_odd, a, phi_bar, phi_full, alpha, beta)
            )(rw)
            rw, ad = adam_update(rw, g, ad, inner_lr)
            return (rw, ad), loss

        (raws, adam), losses = jax.lax.scan(step, (raws, adam), None, length=n_inner)
        return raws, adam, losses

    def outer(params, raws, positions, phi_bar, phi_full):
        def obj(p):
            phi_hat, phi_odd, a = matrices(p, positions)
            return _structure_loss(raws, phi_hat, phi_odd, a, phi_bar, phi_full, alpha, beta)

        return jax.value_and_grad(obj)(params)

    return PretrainKernels(jax.jit(sample), jax.jit(matrices), jax.jit(inner), jax.jit(outer))


@dataclass
class PretrainProblem:
    """One structure's pretraining state: walkers plus persistent subproblem
    variables (Cayley raws and their optimizer moments survive outer steps)."""

    structure: MolecularStructure
    ref: HFReference
    kernels: PretrainKernels
    walkers: WalkerSet
    raws: dict
    inner_adam: dict
    n_o: int


def pretrain_setup(
    structures,
    refs,
    params,
    cfg: MetaConfig,
    n_walkers: int = 64,
    seed: int = 0,
    n_sweeps: int = 5,
    n_inner: int = 50,
    inner_lr: float = 0.02,
    alpha: float = 1.0,
    beta: float = 1e-4,
    burn_sweeps: int = 100,
) -> list[PretrainProblem]:
    """Build per-structure kernels, walkers, and subproblem states.

    Each structure must come with a matching reference bundle; walkers start
    from the nucleus-seeded Gaussian cloud and are burned in under the current
    (untrained) wave function.
    """
    if len(refs) != len(structures):
        raise ConfigurationError("one reference bundle required per structure")
    problems = []
    for i, (structure, ref) in enumerate(zip(structures, refs)):
        if ref is None:
            raise ConfigurationError(f"missing reference for structure {structure.name or i}")
        if structure_fingerprint(ref.structure) != structure_fingerprint(structure):
            raise ConfigurationError(
                f"reference bundle does not match structure {structure.name or i}"
            )
        n_o = sum(cfg.n_orb(z) for z in structure.charges)
        n_e = structure.n_elec
        n_a = n_e + n_e % 2  # phantom slot for odd counts
        raws = {
            "t_raw": jnp.zeros((cfg.n_k, n_o, n_o)),  # Cayley at zero: T = I, A_HF = skew identity
            "a_raw": jnp.zeros((cfg.n_k, n_a, n_a)),
        }
        kernels = make_pretrain_kernels(structure, cfg, n_sweeps, n_inner, inner_lr, alpha, beta)
        walkers = init_walkers(structure, n_walkers, seed + i)
        for _ in range(max(burn_sweeps // max(n_sweeps, 1), 1)):
            walkers, _ = kernels.sample(params, walkers)
        problems.append(
            PretrainProblem(structure, ref, kernels, walkers, raws, adam_init(raws), n_o)
        )
    return problems


def pretrain_step(
    params,
    problems: list[PretrainProblem],
    outer_adam: dict,
    t: int,
    lr0: float = 1e-3,
    lr_decay: float = 1e-4,
):
    """One alternating update: sample, solve the per-structure subproblems,
    then a single outer gradient step on the shared network weights."""
    grads_sum = None
    losses, accs, inner_traces = [], [], []
    for pb in problems:
        pb.walkers, acc = pb.kernels.sample(params, pb.walkers)
        phi_full, phi_bar = hf_targets(pb.ref, pb.walkers.positions, pb.n_o)
        phi_hat, phi_odd, a = pb.kernels.matrices(params, pb.walkers.positions)
        pb.raws, pb.inner_adam, trace = pb.kernels.inner(
            pb.raws, pb.inner_adam, phi_hat, phi_odd, a, phi_bar, phi_full
        )
        loss, grads = pb.kernels.outer(params, pb.raws, pb.walkers.positions, phi_bar, phi_full)
        losses.append(float(loss))
        accs.append(float(acc))
        inner_traces.append(np.asarray(trace))
        grads_sum = (
            grads
            if grads_sum is None
            else jax.tree_util.tree_map(jnp.add, grads_sum, grads)
        )
    grads = jax.tree_util.tree_map(lambda g: g / len(problems), grads_sum)
    lr = lr0 / (1.0 + t * lr_decay)
    params, outer_adam = _adam_update_jit(params, grads, outer_adam, lr)
    record = {
        "step": int(t),
        "loss": float(np.mean(losses)),
        "losses": losses,
        "acceptance": accs,
        "inner_losses": inner_traces,
    }
    return params, outer_adam, record
