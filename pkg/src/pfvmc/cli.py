"""Command line front end: pretrain, train, evaluate, selfcheck, bench-pf.

Runs are driven by a TOML config whose sections mirror the hyperparameter
blocks of the model: [sampling], [pretraining], [optimization], [ansatz],
[pfaffian], [metagnn], [evaluation].  Every key has a full-scale default;
``profile = "desk"`` swaps the architecture and sample budget for sizes that
train on a few CPU cores.  Explicit keys always win over the profile.

Checkpoints are single JSON files holding the format version, config,
structure list, all network weights, the phase-specific optimizer state,
per-structure walker snapshots (including their counter-based RNG state),
and the step counter.  Floats are written with 17 significant digits, so
loading a checkpoint resumes the run bit for bit.

Traces are JSON lines, one record per step and structure, always with the
keys {step, structure_id, energy_mean, energy_var, acceptance, delta_norm}.
During pretraining energy_mean carries the distillation loss for that
structure and energy_var / delta_norm are zero.

Exit codes: 0 success, 2 configuration or input error, 3 numeric
instability, 4 missing reference data.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import jax
import jax.numpy as jnp
import numpy as np

from . import __version__
from .ansatz import logpsi
from .diffengine import fd_check_many
from .embedding import EmbeddingConfig, init_embed_params
from .errors import (
    ConditioningError,
    ConfigurationError,
    DimensionError,
    InvalidInputError,
    MissingReferenceError,
    NodalSurfaceError,
    NumericInstabilityError,
    ParameterDomainError,
    PfvmcError,
    SingularMatrixError,
)
from .hamiltonian import local_energy
from .metagnn import MetaConfig, generate_params, init_meta_params, structure_fingerprint
from .optimizer import (
    ClipConfig,
    Schedule,
    SpringState,
    make_structure_kernels,
    spring_init,
    train_step,
)
from .pretrain import (
    adam_init,
    cayley_skew_orthogonal_jnp,
    cayley_so_jnp,
    hf_equivalence_check,
    load_hf_reference,
    pretrain_setup,
    pretrain_step,
)
from .sampler import WalkerSet, burn_in, init_walkers, mh_sweeps
from .skewlin import antisymmetrize, pfaffian_signlog
from .system import MolecularStructure, make_structure, structure_from_dict

FORMAT_VERSION = 1

# ---------------------------------------------------------------------------
# configuration schema


def _paper_defaults() -> dict:
    """Full-scale defaults; the desk profile overrides architecture and budget."""
    return {
        "profile": "paper",
        "seed": 0,
        "structures": [],
        "sampling": {
            "total_electron_samples": 4096,
            "structure_batch": "full",
        },
        "pretraining": {
            "epochs": 10000,
            "learning_rate": 1e-3,
            "lr_decay": 1e-4,
            "optimizer": "adam",
            "mcmc_steps": 5,
            "basis": "sto-6g",
            "subproblem_steps": 50,
            "subproblem_optimizer": "adam",
            "subproblem_learning_rate": 0.02,
            "alpha": 1.0,
            "beta": 1e-4,
            "burn_in_sweeps": 100,
            "checkpoint_every": 1000,
        },
        "optimization": {
            "steps": 60000,
            "learning_rate": 0.02,
            "lr_decay": 1e-4,
            "optimizer": "spring",
            "mcmc_steps": 20,
            "norm_constraint": 1e-3,
            "damping": 1e-3,
            "momentum": 0.99,
            "clip_factor": 5.0,
            "burn_in_sweeps": 100,
            "checkpoint_every": 100,
        },
        "ansatz": {
            "hidden_dim": 256,
            "ee_int_dim": 32,
            "pair_dim": 32,
            "layers": 4,
            "activation": "silu",
            "pfaffians": 16,
            "jastrow_layers": 3,
            "jastrow_hidden": 16,
            "filter_hidden_dims": [16, 8],
        },
        "pfaffian": {
            "envelopes_per_nucleus": 8,
        },
        "metagnn": {
            "embedding_dim": 64,
            "message_dim": 32,
            "layers": 3,
            "activation": "silu",
            "filter_hidden_dims": [32, 16],
            "supported_charges": [1, 2, 3],
        },
        "evaluation": {
            "steps": 200,
            "mcmc_steps": 5,
            "burn_in_sweeps": 100,
        },
    }


_DESK_OVERRIDES = {
    "sampling": {"total_electron_samples": 512},
    "ansatz": {
        "hidden_dim": 64,
        "ee_int_dim": 16,
        "layers": 2,
        "pfaffians": 2,
        "jastrow_layers": 2,
    },
    "pfaffian": {"envelopes_per_nucleus": 4},
    "metagnn": {
        "embedding_dim": 32,
        "message_dim": 16,
        "layers": 2,
        "filter_hidden_dims": [16, 8],
    },
}

_CHOICES = {
    "profile": ("paper", "desk"),
    "sampling.structure_batch": ("full",),
    "pretraining.optimizer": ("adam",),
    "pretraining.subproblem_optimizer": ("adam",),
    "pretraining.basis": ("sto-6g",),
    "optimization.optimizer": ("spring",),
    "ansatz.activation": ("silu",),
    "metagnn.activation": ("silu",),
}


def _check_type(path: str, value, default):
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigurationError(f"config key {path}: booleans are not used here")
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigurationError(f"config key {path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigurationError(f"config key {path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"config key {path}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigurationError(f"config key {path}: expected a list, got {value!r}")
        elem = default[0] if default else ""
        return [_check_type(f"{path}[{i}]", v, elem) for i, v in enumerate(value)]
    raise ConfigurationError(f"config key {path}: unsupported value {value!r}")


def resolve_config(user: dict) -> dict:
    """Validate a parsed TOML mapping and fill every key from its profile."""
    if not isinstance(user, dict):
        raise ConfigurationError("config root must be a table")
    base = _paper_defaults()
    profile = user.get("profile", "desk")
    if profile not in _CHOICES["profile"]:
        raise ConfigurationError(
            f"config key profile: must be one of {_CHOICES['profile']}, got {profile!r}"
        )
    if profile == "desk":
        for section, over in _DESK_OVERRIDES.items():
            base[section].update(copy.deepcopy(over))
    base["profile"] = profile

    for key, value in user.items():
        if key == "profile":
            continue
        if key in ("seed", "structures"):
            base[key] = _check_type(key, value, base[key] if key == "seed" else [""])
            continue
        if key not in base or not isinstance(base[key], dict):
            raise ConfigurationError(f"unknown config key: {key}")
        section = base[key]
        if not isinstance(value, dict):
            raise ConfigurationError(f"config key {key}: expected a table")
        for sub, sval in value.items():
            if sub not in section:
                raise ConfigurationError(f"unknown config key: {key}.{sub}")
            section[sub] = _check_type(f"{key}.{sub}", sval, section[sub])

    for path, allowed in _CHOICES.items():
        parts = path.split(".")
        value = base[parts[0]] if len(parts) == 1 else base[parts[0]][parts[1]]
        if value not in allowed:
            raise ConfigurationError(
                f"config key {path}: must be one of {allowed}, got {value!r}"
            )
    if len(base["ansatz"]["filter_hidden_dims"]) != 2:
        raise ConfigurationError("config key ansatz.filter_hidden_dims: expected two entries")
    if len(base["metagnn"]["filter_hidden_dims"]) != 2:
        raise ConfigurationError("config key metagnn.filter_hidden_dims: expected two entries")
    return base


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        user = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path}: {exc}") from None
    config = resolve_config(user)
    config["structures"] = [
        str((path.parent / p).resolve()) if not Path(p).is_absolute() else p
        for p in config["structures"]
    ]
    return config


def _toml_value(value) -> str:
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = format(value, ".17g")
        return text if ("e" in text or "." in text) else text + ".0"
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigurationError(f"cannot serialize config value {value!r}")


def dump_config(config: dict) -> str:
    """TOML text with every key explicit; load(dump(c)) == c."""
    lines = [f"profile = {_toml_value(config['profile'])}"]
    lines.append(f"seed = {_toml_value(config['seed'])}")
    lines.append(f"structures = {_toml_value(config['structures'])}")
    for section in (
        "sampling", "pretraining", "optimization", "ansatz",
        "pfaffian", "metagnn", "evaluation",
    ):
        lines.append("")
        lines.append(f"[{section}]")
        for key, value in config[section].items():
            lines.append(f"{key} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def build_model_config(config: dict) -> MetaConfig:
    a, m, pf = config["ansatz"], config["metagnn"], config["pfaffian"]
    embed = EmbeddingConfig(
        feature_dim=a["hidden_dim"],
        ee_int_dim=a["ee_int_dim"],
        pair_dim=a["pair_dim"],
        n_update_layers=a["layers"],
        filter_hidden=a["filter_hidden_dims"][0],
        filter_core=a["filter_hidden_dims"][1],
    )
    cfg = MetaConfig(
        embedding_dim=m["embedding_dim"],
        message_dim=m["message_dim"],
        n_layers=m["layers"],
        filter_hidden=m["filter_hidden_dims"][0],
        filter_core=m["filter_hidden_dims"][1],
        supported_charges=tuple(m["supported_charges"]),
        n_env_per_nuc=pf["envelopes_per_nucleus"],
        n_k=a["pfaffians"],
        jastrow_hidden=a["jastrow_hidden"],
        jastrow_layers=a["jastrow_layers"],
        embed=embed,
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# model assembly


def init_model_params(seed: int, cfg: MetaConfig) -> dict:
    k_meta, k_embed = jax.random.split(jax.random.PRNGKey(seed))
    return {
        "meta": init_meta_params(k_meta, cfg),
        "embed": init_embed_params(k_embed, cfg.embed),
    }


def field_factory(cfg: MetaConfig):
    """make_field(params, structure) -> (r -> SignLogValue) for the optimizer."""

    def make_field(params, structure):
        theta = generate_params(structure, params["meta"], cfg)
        return lambda r: logpsi(structure, r, params["embed"], theta, cfg.embed)

    return make_field


def load_structures(config: dict) -> list[MolecularStructure]:
    structures = []
    for entry in config["structures"]:
        path = Path(entry)
        if not path.exists():
            raise ConfigurationError(f"structure file not found: {path}")
        try:
            structures.append(structure_from_dict(json.loads(path.read_text())))
        except (json.JSONDecodeError, KeyError) as exc:
            raise InvalidInputError(f"structure file {path}: {exc}") from None
    if not structures:
        raise ConfigurationError("config lists no structures")
    return structures


def walkers_per_structure(config: dict, n_structures: int) -> int:
    total = config["sampling"]["total_electron_samples"]
    share = total // n_structures
    if share < 1:
        raise ConfigurationError(
            f"sample budget {total} leaves no walkers for {n_structures} structures"
        )
    return share


def resolve_references(structures, hf_ref: str | None) -> list:
    """One reference bundle per structure: a file for single-structure runs,
    or a directory searched for <name>_hf_ref.json then <name>.json."""
    if hf_ref is None:
        raise MissingReferenceError("pretraining requires --hf-ref")
    root = Path(hf_ref)
    if root.is_file():
        if len(structures) != 1:
            raise MissingReferenceError(
                "--hf-ref is a single file but the config lists several structures; "
                "point it at a directory of reference bundles"
            )
        return [load_hf_reference(root)]
    refs = []
    for s in structures:
        name = s.name or "structure"
        for candidate in (root / f"{name}_hf_ref.json", root / f"{name}.json"):
            if candidate.exists():
                refs.append(load_hf_reference(candidate))
                break
        else:
            raise MissingReferenceError(f"no reference bundle for {name!r} under {root}")
    return refs


# ---------------------------------------------------------------------------
# checkpoint serialization


def _encode(x):
    if isinstance(x, (jnp.ndarray, np.ndarray)):
        arr = np.asarray(x)
        return {
            "__nd__": str(arr.dtype),
            "shape": list(arr.shape),
            "data": arr.ravel().tolist(),
        }
    if isinstance(x, dict):
        return {k: _encode(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_encode(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return x


def _decode(x):
    if isinstance(x, dict):
        if "__nd__" in x:
            arr = np.asarray(x["data"], dtype=np.dtype(x["__nd__"])).reshape(x["shape"])
            return jnp.asarray(arr)
        return {k: _decode(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_decode(v) for v in x]
    return x


def _format_json(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "NaN"
        if math.isinf(value):
            return "Infinity" if value > 0 else "-Infinity"
        # 17 significant digits round-trip any float64 exactly
        text = format(value, ".17g")
        return text if ("e" in text or "." in text) else text + ".0"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_json(v) for v in value) + "]"
    if isinstance(value, dict):
        items = (f"{json.dumps(str(k))}: {_format_json(v)}" for k, v in value.items())
        return "{" + ", ".join(items) + "}"
    raise InvalidInputError(f"cannot serialize {type(value).__name__} to JSON")


def _walker_snapshot(structure: MolecularStructure, walkers: WalkerSet) -> dict:
    return {
        "fingerprint": structure_fingerprint(structure),
        "positions": _encode(walkers.positions),
        "sign": _encode(walkers.sign),
        "log_abs": _encode(walkers.log_abs),
        "width": _encode(walkers.width),
        "base_key": _encode(walkers.base_key),
        "counter": _encode(walkers.counter),
    }


def _restore_walkers(snapshot: dict) -> WalkerSet:
    return WalkerSet(
        positions=_decode(snapshot["positions"]),
        sign=_decode(snapshot["sign"]),
        log_abs=_decode(snapshot["log_abs"]),
        width=_decode(snapshot["width"]),
        base_key=_decode(snapshot["base_key"]),
        counter=_decode(snapshot["counter"]),
    )


def _structure_dict(s: MolecularStructure) -> dict:
    return {
        "name": s.name,
        "nuclei": [
            {"Z": int(z), "pos_bohr": [float(c) for c in pos]}
            for z, pos in zip(s.charges, np.asarray(s.positions))
        ],
        "n_up": int(s.n_up),
        "n_down": int(s.n_down),
    }


def save_checkpoint(
    path: str | Path,
    phase: str,
    step: int,
    config: dict,
    structures,
    params,
    walker_sets,
    phase_state: dict,
) -> None:
    ckpt = {
        "format_version": FORMAT_VERSION,
        "version": __version__,
        "phase": phase,
        "step": int(step),
        "config": config,
        "structures": [_structure_dict(s) for s in structures],
        "params": _encode(params),
        "phase_state": phase_state,
        "walkers": [
            _walker_snapshot(s, w) for s, w in zip(structures, walker_sets)
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(_format_json(ckpt) + "\n")
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"checkpoint not found: {path}")
    try:
        ckpt = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"checkpoint {path}: {exc}") from None
    if ckpt.get("format_version") != FORMAT_VERSION:
        raise InvalidInputError(
            f"checkpoint {path}: format version {ckpt.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    ckpt["params"] = _decode(ckpt["params"])
    return ckpt


def _spring_state_dict(state: SpringState) -> dict:
    return {
        "delta": _encode(np.asarray(state.delta)),
        "lam": float(state.lam),
        "mu": float(state.mu),
        "norm_c": float(state.norm_c),
        "t": int(state.t),
    }


def _restore_spring(entry: dict) -> SpringState:
    return SpringState(
        delta=np.asarray(_decode(entry["delta"])),
        lam=entry["lam"],
        mu=entry["mu"],
        norm_c=entry["norm_c"],
        t=entry["t"],
    )


# ---------------------------------------------------------------------------
# trace writing


class TraceWriter:
    """Appends one JSON line per record; every line carries the same keys."""

    KEYS = ("step", "structure_id", "energy_mean", "energy_var", "acceptance", "delta_norm")

    def __init__(self, path: str | Path | None):
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "a")
        else:
            self._fh = None

    def write(self, record: dict) -> None:
        if self._fh is None:
            return
        row = {k: record[k] for k in self.KEYS}
        self._fh.write(_format_json(row) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# ---------------------------------------------------------------------------
# pretraining command


def _structure_ids(structures) -> list[str]:
    return [s.name or f"structure{i}" for i, s in enumerate(structures)]


def cmd_pretrain(args) -> int:
    if not args.config:
        raise ConfigurationError("pretrain requires --config")
    if not args.out:
        raise ConfigurationError("pretrain requires --out for the checkpoint")
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    cfg = build_model_config(config)
    structures = load_structures(config)
    refs = resolve_references(structures, args.hf_ref)
    ids = _structure_ids(structures)
    pre = config["pretraining"]
    n_walkers = walkers_per_structure(config, len(structures))

    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if resume is not None and resume["phase"] != "pretrain":
        raise InvalidInputError(
            f"checkpoint phase {resume['phase']!r} cannot seed a pretrain run"
        )

    params = resume["params"] if resume else init_model_params(config["seed"], cfg)
    problems = pretrain_setup(
        structures,
        refs,
        params,
        cfg,
        n_walkers=n_walkers,
        seed=config["seed"],
        n_sweeps=pre["mcmc_steps"],
        n_inner=pre["subproblem_steps"],
        inner_lr=pre["subproblem_learning_rate"],
        alpha=pre["alpha"],
        beta=pre["beta"],
        burn_sweeps=0 if resume else pre["burn_in_sweeps"],
    )
    if resume is not None:
        state = resume["phase_state"]
        outer_adam = _decode(state["outer_adam"])
        by_fp = {w["fingerprint"]: i for i, w in enumerate(resume["walkers"])}
        for pb, sub in zip(problems, state["problems"]):
            fp = structure_fingerprint(pb.structure)
            if fp not in by_fp:
                raise InvalidInputError(
                    f"checkpoint has no walkers for structure {pb.structure.name!r}"
                )
            pb.walkers = _restore_walkers(resume["walkers"][by_fp[fp]])
            pb.raws = _decode(sub["raws"])
            pb.inner_adam = _decode(sub["inner_adam"])
        start = resume["step"]
    else:
        outer_adam = adam_init(params)
        start = 0

    def snapshot(step: int) -> None:
        save_checkpoint(
            args.out,
            "pretrain",
            step,
            config,
            structures,
            params,
            [pb.walkers for pb in problems],
            {
                "outer_adam": _encode(outer_adam),
                "problems": [
                    {"raws": _encode(pb.raws), "inner_adam": _encode(pb.inner_adam)}
                    for pb in problems
                ],
            },
        )

    trace = TraceWriter(args.trace)
    epochs = pre["epochs"]
    every = pre["checkpoint_every"]
    t0 = time.monotonic()
    try:
        for t in range(start, epochs):
            params, outer_adam, record = pretrain_step(
                params, problems, outer_adam, t,
                lr0=pre["learning_rate"], lr_decay=pre["lr_decay"],
            )
            for sid, loss, acc in zip(ids, record["losses"], record["acceptance"]):
                trace.write({
                    "step": t,
                    "structure_id": sid,
                    "energy_mean": loss,
                    "energy_var": 0.0,
                    "acceptance": acc,
                    "delta_norm": 0.0,
                })
            if every and (t + 1) % every == 0:
                snapshot(t + 1)
            if args.verbose and (t % max(1, epochs // 20) == 0 or t == epochs - 1):
                print(
                    f"pretrain step {t}: loss {record['loss']:.6e} "
                    f"({time.monotonic() - t0:.0f}s)",
                    flush=True,
                )
    finally:
        trace.close()
    snapshot(epochs)
    print(f"pretraining finished after {epochs} epochs; checkpoint: {args.out}")
    return 0


# ---------------------------------------------------------------------------
# optimization command


def cmd_train(args) -> int:
    if not args.config:
        raise ConfigurationError("train requires --config")
    if not args.out:
        raise ConfigurationError("train requires --out for the checkpoint")
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    cfg = build_model_config(config)
    structures = load_structures(config)
    opt = config["optimization"]
    n_walkers = walkers_per_structure(config, len(structures))
    make_field = field_factory(cfg)

    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    params = resume["params"] if resume else init_model_params(config["seed"], cfg)
    n_params = int(sum(np.prod(x.shape) for x in jax.tree_util.tree_leaves(params)))

    kernels = [
        make_structure_kernels(s, make_field, n_sweeps=opt["mcmc_steps"])
        for s in structures
    ]

    by_fp = {}
    if resume is not None:
        by_fp = {w["fingerprint"]: w for w in resume["walkers"]}
    walker_sets = []
    for i, s in enumerate(structures):
        snap = by_fp.get(structure_fingerprint(s))
        if snap is not None:
            walker_sets.append(_restore_walkers(snap))
        else:
            field = make_field(params, s)
            w = init_walkers(s, n_walkers, config["seed"] + i, f=field)
            w, _ = burn_in(field, w, n_sweeps=opt["burn_in_sweeps"])
            walker_sets.append(w)

    if resume is not None and resume["phase"] == "train":
        spring = _restore_spring(resume["phase_state"]["spring"])
        start = resume["step"]
    else:
        spring = spring_init(
            n_params,
            lam=opt["damping"],
            mu=opt["momentum"],
            norm_c=opt["norm_constraint"],
        )
        start = 0

    schedule = Schedule(eta0=opt["learning_rate"], decay=opt["lr_decay"])
    clip = ClipConfig(clip_factor=opt["clip_factor"])

    def snapshot(step: int) -> None:
        save_checkpoint(
            args.out, "train", step, config, structures, params, walker_sets,
            {"spring": _spring_state_dict(spring)},
        )

    trace = TraceWriter(args.trace)
    steps = opt["steps"]
    every = opt["checkpoint_every"]
    saved_any = False
    t0 = time.monotonic()
    try:
        for t in range(start, steps):
            try:
                params, walker_sets, spring, records = train_step(
                    params, structures, kernels, walker_sets, spring, schedule, clip
                )
            except (NumericInstabilityError, NodalSurfaceError, ConditioningError) as exc:
                where = f"last good checkpoint: {args.out}" if saved_any else "no checkpoint saved"
                raise type(exc)(f"{exc} (step {t}; {where})") from exc
            for rec in records:
                trace.write(rec)
            if every and (t + 1) % every == 0:
                snapshot(t + 1)
                saved_any = True
            if args.verbose and (t % max(1, steps // 20) == 0 or t == steps - 1):
                means = ", ".join(
                    f"{r['structure_id']} {r['energy_mean']:.6f}" for r in records
                )
                print(
                    f"train step {t}: {means} ({time.monotonic() - t0:.0f}s)",
                    flush=True,
                )
    finally:
        trace.close()
    snapshot(steps)
    print(f"optimization finished after {steps} steps; checkpoint: {args.out}")
    return 0


# ---------------------------------------------------------------------------
# evaluation command


def cmd_evaluate(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("evaluate requires --checkpoint")
    ckpt = load_checkpoint(args.checkpoint)
    config = resolve_config(ckpt["config"])
    if args.config:
        override = load_config(args.config)
        config["evaluation"] = override["evaluation"]
        config["structures"] = override["structures"]
        config["seed"] = override["seed"]
    if args.seed is not None:
        config["seed"] = args.seed
    cfg = build_model_config(config)
    params = ckpt["params"]

    if args.config and config["structures"]:
        structures = load_structures(config)
    else:
        structures = [structure_from_dict(d) for d in ckpt["structures"]]
    ids = _structure_ids(structures)
    ev = config["evaluation"]
    n_walkers = walkers_per_structure(config, len(structures))
    make_field = field_factory(cfg)
    by_fp = {w["fingerprint"]: w for w in ckpt["walkers"]}

    results = []
    for i, s in enumerate(structures):
        field = make_field(params, s)
        snap = by_fp.get(structure_fingerprint(s))
        if snap is not None:
            walkers = _restore_walkers(snap)
        else:
            walkers = init_walkers(s, n_walkers, config["seed"] + i, f=field)
            walkers, _ = burn_in(field, walkers, n_sweeps=ev["burn_in_sweeps"])
        energy_fn = jax.jit(
            jax.vmap(lambda r, f=field, s=s: local_energy(f, s, r).total)
        )
        sweep = jax.jit(lambda w, f=field: mh_sweeps(f, w, ev["mcmc_steps"]))
        samples = []
        for _ in range(ev["steps"]):
            walkers, _acc = sweep(walkers)
            samples.append(np.asarray(energy_fn(walkers.positions)))
        block = np.stack(samples)  # (steps, n_walkers)
        block_means = block.mean(axis=1)
        results.append({
            "structure_id": ids[i],
            "energy_mean": float(block.mean()),
            "energy_var": float(block.var()),
            "stderr": float(block_means.std(ddof=1) / math.sqrt(len(block_means))),
            "n_samples": int(block.size),
        })
        print(
            f"{ids[i]}: E = {results[-1]['energy_mean']:.6f} "
            f"+- {results[-1]['stderr']:.6f} Ha",
            flush=True,
        )

    report = {
        "phase": ckpt["phase"],
        "step": ckpt["step"],
        "structures": results,
    }
    if args.out:
        Path(args.out).write_text(_format_json(report) + "\n")
    return 0


# ---------------------------------------------------------------------------
# selfcheck command


def _check(name: str, ok: bool, detail: str) -> bool:
    print(f"{name}: {'ok' if ok else 'FAIL'} ({detail})", flush=True)
    return ok


def cmd_selfcheck(args) -> int:
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    ok = True

    worst_sq, worst_cong = 0.0, 0.0
    for _ in range(40):
        n = int(rng.integers(1, 7)) * 2
        a = antisymmetrize(rng.standard_normal((n, n)))
        b = rng.standard_normal((n, n))
        pf = pfaffian_signlog(a)
        sd, ld = np.linalg.slogdet(a)
        worst_sq = max(worst_sq, abs(math.exp(2 * pf.log_abs - ld) - 1.0))
        lhs = pfaffian_signlog(b @ a @ b.T)
        sdb, ldb = np.linalg.slogdet(b)
        worst_cong = max(
            worst_cong,
            abs(lhs.sign * math.exp(lhs.log_abs - ldb - pf.log_abs) - sdb * pf.sign),
        )
    ok &= _check("pfaffian squares to determinant", worst_sq < 1e-9, f"rel {worst_sq:.2e}")
    ok &= _check("pfaffian congruence identity", worst_cong < 1e-9, f"rel {worst_cong:.2e}")

    worst_orth, worst_pf1 = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(1, 7)) * 2
        raw = jnp.asarray(rng.standard_normal((n, n)))
        t = np.asarray(cayley_so_jnp(raw))
        worst_orth = max(worst_orth, float(np.max(np.abs(t.T @ t - np.eye(n)))))
        a = np.asarray(cayley_skew_orthogonal_jnp(raw))
        worst_pf1 = max(worst_pf1, abs(abs(pfaffian_signlog(a).value) - 1.0))
    ok &= _check("cayley map is orthogonal", worst_orth < 1e-12, f"max {worst_orth:.2e}")
    ok &= _check(
        "cayley skew image has unit pfaffian", worst_pf1 < 1e-9, f"dev {worst_pf1:.2e}"
    )

    cfg = MetaConfig()
    h4 = make_structure(
        [(0.0, 0.0, -2.7), (0.0, 0.0, -0.9), (0.0, 0.0, 0.9), (0.0, 0.0, 2.7)],
        [1, 1, 1, 1],
        n_up=2,
        n_down=2,
        name="h4",
    )
    params = init_model_params(0, cfg)
    field = field_factory(cfg)(params, h4)
    worst_swap = 0.0
    sign_ok = True
    for _ in range(10):
        r = rng.standard_normal((4, 3)) + np.asarray(h4.positions)
        v = field(jnp.asarray(r))
        r_swapped = r[[1, 0, 2, 3]]
        vs = field(jnp.asarray(r_swapped))
        sign_ok &= int(v.sign) == -int(vs.sign)
        worst_swap = max(worst_swap, abs(float(v.log_abs) - float(vs.log_abs)))
    ok &= _check(
        "same-spin exchange antisymmetry",
        sign_ok and worst_swap < 1e-10,
        f"log dev {worst_swap:.2e}",
    )

    # keep clear of cusps and near-nodal regions, where central differences
    # of log|psi| lose accuracy regardless of the implementation; a broken
    # derivative still fails by orders of magnitude at benign points
    from .diffengine import grad_and_laplacian

    nuclei = np.asarray(h4.positions)
    curvature = jax.jit(lambda x: grad_and_laplacian(field, x))
    points = []
    while len(points) < 4:
        r = rng.standard_normal((4, 3)) + nuclei
        d_en = np.linalg.norm(r[:, None, :] - nuclei[None, :, :], axis=-1)
        d_ee = np.linalg.norm(r[:, None, :] - r[None, :, :], axis=-1)
        np.fill_diagonal(d_ee, np.inf)
        if d_en.min() < 0.25 or d_ee.min() < 0.25:
            continue
        g, lap = curvature(jnp.asarray(r))
        if abs(float(lap)) < 50.0 and float(jnp.max(jnp.abs(g))) < 10.0:
            points.append(r)
    fd = fd_check_many(field, jnp.asarray(np.stack(points)), h=1e-4)
    ok &= _check(
        "derivatives match finite differences",
        fd["grad_rel"] < 1e-5 and fd["laplacian_rel"] < 1e-5,
        f"grad {fd['grad_rel']:.2e}, lap {fd['laplacian_rel']:.2e}",
    )

    worst_eq = 0.0
    for _ in range(30):
        n_e = int(rng.integers(2, 6))
        n_o = 2 * ((n_e + 1) // 2) + 4
        phi = rng.standard_normal((n_e, n_e))
        pad = n_e + n_e % 2
        a_hf = antisymmetrize(rng.standard_normal((pad, pad)))
        out = hf_equivalence_check(phi, a_hf, n_o)
        worst_eq = max(worst_eq, out["rel_error"])
    ok &= _check(
        "pfaffian matches reference determinant form", worst_eq < 1e-9, f"rel {worst_eq:.2e}"
    )

    if not ok:
        raise NumericInstabilityError("self-check failed")
    print("all self-checks passed")
    return 0


# ---------------------------------------------------------------------------
# pfaffian benchmark


def bench_pfaffian(
    sizes=(2, 64, 128, 256, 512), reps: int = 5, seed: int = 0
) -> dict:
    """Wall-clock of sign/log Pf(phi A phi^T), products included, against the
    determinant baseline sign/log det(phi); returns per-size timings and the
    log-log slope fitted over sizes >= 64."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        phi = rng.standard_normal((n, n))
        a = antisymmetrize(rng.standard_normal((n, n)))
        pf_path = lambda: pfaffian_signlog(antisymmetrize(phi @ a @ phi.T))
        det_path = lambda: np.linalg.slogdet(phi)
        pf_path(), det_path()  # warm caches
        t_pf, t_det = [], []
        for _ in range(reps):
            t0 = time.perf_counter()
            pf_path()
            t_pf.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            det_path()
            t_det.append(time.perf_counter() - t0)
        rows.append({
            "n": int(n),
            "pf_seconds": float(np.median(t_pf)),
            "det_seconds": float(np.median(t_det)),
        })
    big = [r for r in rows if r["n"] >= 64]
    logs_n = np.log([r["n"] for r in big])
    logs_t = np.log([r["pf_seconds"] for r in big])
    slope = float(np.polyfit(logs_n, logs_t, 1)[0]) if len(big) >= 2 else float("nan")
    return {
        "sizes": rows,
        "slope": slope,
        "ratio": [r["pf_seconds"] / max(r["det_seconds"], 1e-12) for r in rows],
    }


def cmd_bench_pf(args) -> int:
    result = bench_pfaffian(seed=args.seed if args.seed is not None else 0)
    print(f"{'n':>6} {'pfaffian path':>14} {'determinant':>12} {'ratio':>7}")
    for row, ratio in zip(result["sizes"], result["ratio"]):
        print(
            f"{row['n']:>6} {row['pf_seconds']:>12.6f} s {row['det_seconds']:>10.6f} s "
            f"{ratio:>7.2f}"
        )
    print(f"log-log slope over n >= 64: {result['slope']:.3f}")
    if args.out:
        Path(args.out).write_text(_format_json(result) + "\n")
    return 0


# ---------------------------------------------------------------------------
# entry point


_CONFIG_ERRORS = (ConfigurationError, InvalidInputError, DimensionError, ParameterDomainError)
_NUMERIC_ERRORS = (
    NumericInstabilityError,
    NodalSurfaceError,
    ConditioningError,
    SingularMatrixError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfvmc",
        description="Variational Monte Carlo with a generated Pfaffian wave function.",
    )
    parser.add_argument("--version", action="version", version=f"pfvmc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (
        ("pretrain", cmd_pretrain, "distill reference orbitals into the wave function"),
        ("train", cmd_train, "variational optimization of the trained weights"),
        ("evaluate", cmd_evaluate, "sample energies from a checkpoint"),
        ("selfcheck", cmd_selfcheck, "run fast internal consistency checks"),
        ("bench-pf", cmd_bench_pf, "time the pfaffian path against a determinant"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--checkpoint", help="checkpoint to resume from or evaluate")
        p.add_argument("--hf-ref", dest="hf_ref", help="reference bundle file or directory")
        p.add_argument("--out", help="output path (checkpoint or report)")
        p.add_argument("--trace", help="JSONL trace file, appended to")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument(
            "--threads", type=int, help="CPU thread budget (1 pins single-threaded)"
        )
        p.add_argument("-v", "--verbose", action="store_true", help="periodic progress lines")
        p.set_defaults(fn=fn)
    return parser


def _apply_threads(argv: list[str] | None) -> None:
    """Re-exec with thread env vars set before the numerics backend starts."""
    args = argv if argv is not None else sys.argv[1:]
    if os.environ.get("_PFVMC_THREADS_APPLIED"):
        return
    threads = None
    for i, token in enumerate(args):
        if token == "--threads" and i + 1 < len(args):
            threads = args[i + 1]
        elif token.startswith("--threads="):
            threads = token.split("=", 1)[1]
    if threads is None:
        return
    try:
        n = max(1, int(threads))
    except ValueError:
        return  # argparse reports it properly later
    os.environ["_PFVMC_THREADS_APPLIED"] = "1"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    eigen = "false" if n == 1 else "true"
    flags = os.environ.get("XLA_FLAGS", "")
    os.environ["XLA_FLAGS"] = f"{flags} --xla_cpu_multi_thread_eigen={eigen}".strip()
    os.execv(sys.executable, [sys.executable, "-m", "pfvmc.cli"] + list(args))


def main(argv: list[str] | None = None) -> int:
    _apply_threads(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except MissingReferenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PfvmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
