"""Export bundle tests: schema, determinism, probe consistency, CLI paths."""

import json

import numpy as np
import pytest

from hfref.basis import Shell
from hfref.cli import main
from hfref.export import (
    compute_reference,
    dumps_bundle,
    load_structure,
    probe_points,
    write_bundle,
)
from hfref.integrals import eval_ao
from hfref.scf import ScfError

H2_STRUCT = {
    "name": "H2",
    "nuclei": [
        {"Z": 1, "pos_bohr": [0.0, 0.0, -0.7]},
        {"Z": 1, "pos_bohr": [0.0, 0.0, 0.7]},
    ],
    "n_up": 1,
    "n_down": 1,
}

BUNDLE_KEYS = {
    "format_version", "structure", "basis", "shells", "mo_coeff_up", "mo_coeff_down",
    "n_occ_up", "n_occ_down", "hf_energy_hartree", "probe",
}


def write_struct(tmp_path, struct, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(struct))
    return p


def test_load_structure_validation(tmp_path):
    bad = dict(H2_STRUCT)
    del bad["n_up"]
    with pytest.raises(ValueError, match="missing key"):
        load_structure(write_struct(tmp_path, bad))
    empty = dict(H2_STRUCT, n_up=0, n_down=0)
    with pytest.raises(ValueError, match="no electrons"):
        load_structure(write_struct(tmp_path, empty))
    mismatched = dict(H2_STRUCT, charge=1)  # 2 protons, charge +1 -> 1 electron, not 2
    with pytest.raises(ValueError, match="charge/spin mismatch"):
        load_structure(write_struct(tmp_path, mismatched))
    ok = dict(H2_STRUCT, charge=0)
    assert load_structure(write_struct(tmp_path, ok))["name"] == "H2"


def test_probe_points_single_atom():
    pts = probe_points(np.zeros((1, 3)))
    assert pts.shape == (8, 3)
    norms = np.sort(np.linalg.norm(pts, axis=1))
    np.testing.assert_allclose(norms, np.repeat([0.1, 0.5, 1.0, 2.0], 2))
    assert np.min(np.linalg.norm(pts, axis=1)) > 0.05  # never at a nucleus


def test_probe_points_deduplicated():
    # two atoms 0.2 apart on x share the point between them at radius 0.1
    centers = np.array([[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]])
    pts = probe_points(centers)
    assert pts.shape == (15, 3)
    assert len({tuple(p) for p in pts.tolist()}) == 15


def test_bundle_schema_and_probe_closure():
    bundle = compute_reference(H2_STRUCT)
    assert set(bundle.keys()) == BUNDLE_KEYS
    assert bundle["format_version"] == 1
    assert bundle["basis"] == "STO-6G"
    assert bundle["n_occ_up"] == 1 and bundle["n_occ_down"] == 1
    assert -1.3 < bundle["hf_energy_hartree"] < -1.0

    # the probe values must be recomputable from the bundle contents alone
    shells = [
        Shell(s["center_index"], s["l"], tuple(s["exponents"]), tuple(s["coefficients"]))
        for s in bundle["shells"]
    ]
    centers = np.array([n["pos_bohr"] for n in bundle["structure"]["nuclei"]])
    points = np.array(bundle["probe"]["points_bohr"])
    ao = eval_ao(shells, centers, points)
    mo_up = ao @ np.array(bundle["mo_coeff_up"])
    np.testing.assert_allclose(mo_up, np.array(bundle["probe"]["mo_values_up"]), atol=1e-14)
    assert np.all(np.isfinite(mo_up)) and np.max(np.abs(mo_up)) < 10.0


def test_bundle_unrestricted_spins():
    struct = {
        "name": "Li",
        "nuclei": [{"Z": 3, "pos_bohr": [0.0, 0.0, 0.0]}],
        "n_up": 2,
        "n_down": 1,
    }
    bundle = compute_reference(struct)
    assert bundle["n_occ_up"] == 2 and bundle["n_occ_down"] == 1
    assert len(bundle["mo_coeff_up"][0]) == 2
    assert len(bundle["mo_coeff_down"][0]) == 1
    assert len(bundle["probe"]["mo_values_down"][0]) == 1


def test_serialization_roundtrip_exact():
    bundle = compute_reference(H2_STRUCT)
    text = dumps_bundle(bundle)
    parsed = json.loads(text)
    assert parsed["hf_energy_hartree"] == bundle["hf_energy_hartree"]
    for row_t, row_o in zip(parsed["mo_coeff_up"], bundle["mo_coeff_up"]):
        for a, b in zip(row_t, row_o):
            assert a == b  # bit-exact float round-trip


def test_byte_identical_reruns(tmp_path):
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    write_bundle(compute_reference(H2_STRUCT), p1)
    write_bundle(compute_reference(H2_STRUCT), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_cli_success(tmp_path):
    spath = write_struct(tmp_path, H2_STRUCT)
    out = tmp_path / "hf_ref.json"
    assert main([str(spath), "--out", str(out)]) == 0
    bundle = json.loads(out.read_text())
    assert bundle["basis"] == "STO-6G"


def test_cli_bad_structure(tmp_path):
    bad = dict(H2_STRUCT)
    del bad["nuclei"]
    spath = write_struct(tmp_path, bad)
    assert main([str(spath), "--out", str(tmp_path / "o.json")]) == 2
    assert main([str(tmp_path / "missing.json"), "--out", str(tmp_path / "o.json")]) == 2


def test_cli_unsupported_element(tmp_path):
    struct = {
        "name": "Na",
        "nuclei": [{"Z": 11, "pos_bohr": [0.0, 0.0, 0.0]}],
        "n_up": 6,
        "n_down": 5,
    }
    spath = write_struct(tmp_path, struct)
    assert main([str(spath), "--out", str(tmp_path / "o.json")]) == 2


def test_cli_scf_failure(tmp_path, monkeypatch):
    import hfref.export

    def boom(*args, **kwargs):
        raise ScfError("did not converge")

    monkeypatch.setattr(hfref.export, "run_scf", boom)
    spath = write_struct(tmp_path, H2_STRUCT)
    assert main([str(spath), "--out", str(tmp_path / "o.json")]) == 3
