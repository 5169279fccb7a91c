import json
import os

import numpy as np
import pytest

from coarse_hydro.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from coarse_hydro.output import read_array, read_manifest

PACKET = {
    "grid": {"box_length": 20.0, "M": 32},
    "physics": {"m": 1.0, "l_av": 0.0},
    "time": {"dt": 1e-3, "T": 0.1, "snapshot_stride": 10},
    "initial_state": {"kind": "gaussian_packet", "width": 1.0, "momentum": 1.0},
    "sweep": {"l_grid": [0.1, 0.2, 0.3, 0.4], "t_probe": 0.01, "node_horizon": 0.01, "node_samples": 2},
}

CONSTANT = {
    **PACKET,
    "physics": {"m": 1.0, "l_av": 0.3},
    "time": {"dt": 1e-3, "T": 0.05, "snapshot_stride": 10},
    "initial_state": {"kind": "plane_wave", "mode": 0},
}


def run(tmp_path, command, tree, *extra):
    fname = tmp_path / "run.json"
    fname.write_text(json.dumps(tree))
    out = str(tmp_path / "out")
    return main([command, "-c", str(fname), "-o", out, *extra]), out


def test_config_errors(tmp_path):
    code, _ = run(tmp_path, "evolve", {"grid": {"d": 1}})
    assert code == EXIT_CONFIG
    code, _ = run(tmp_path, "evolve", {**PACKET, "grid": {"M": 48}})
    assert code == EXIT_CONFIG
    assert main(["evolve", "-c", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_unknown_command(tmp_path):
    with pytest.raises(SystemExit):
        main(["relax", "-c", str(tmp_path / "run.json")])


def test_numeric_failure(tmp_path):
    # dt * max(H) = 0.63 at l = 0 violates the stability guard
    tree = {
        **PACKET,
        "time": {"dt": 0.05, "T": 0.5, "snapshot_stride": 1},
        "sweep": {"t_probe": 0.05, "node_horizon": 0.05},
    }
    code, out = run(tmp_path, "evolve", tree)
    assert code == EXIT_NUMERIC
    manifest = read_manifest(out)
    assert manifest["status"] == "failed"
    assert "stability" in manifest["scalars"]["error"]
    assert manifest["files"] == {}


def test_kernels_without_coarse_graining(tmp_path):
    code, out = run(tmp_path, "kernels", PACKET)
    assert code == EXIT_OK
    manifest = read_manifest(out)
    assert manifest["command"] == "kernels"
    assert manifest["status"] == "ok"
    np.testing.assert_array_equal(read_array(os.path.join(out, "symbol.cgh1")), 1.0)
    np.testing.assert_array_equal(read_array(os.path.join(out, "kernel_G.cgh1")), 0.0)
    np.testing.assert_array_equal(read_array(os.path.join(out, "kernel_F.cgh1")), 0.0)
    H = read_array(os.path.join(out, "kernel_H.cgh1"))
    np.testing.assert_allclose(H, read_array(os.path.join(out, "omega.cgh1")))
    assert "expansion.csv" in manifest["files"]


def test_evolve_schrodinger_limit(tmp_path):
    code, out = run(tmp_path, "evolve", PACKET)
    assert code == EXIT_OK
    manifest = read_manifest(out)
    scalars = manifest["scalars"]
    assert scalars["snapshots"] == 11
    assert scalars["schrodinger_match"] <= 1e-8
    assert scalars["norm_drift"] <= 1e-12
    assert scalars["E_P_real"] == 0
    assert read_array(os.path.join(out, "snapshots.cgh1")).shape == (11, 32)
    np.testing.assert_allclose(read_array(os.path.join(out, "times.cgh1")), np.linspace(0, 0.1, 11), atol=1e-15)
    assert {"norm.csv", "residuals.csv", "field_rho.cgh1"} <= set(manifest["files"])
    assert os.path.exists(os.path.join(out, "coarse-hydro.log"))


def test_evolve_constant_state(tmp_path):
    code, out = run(tmp_path, "evolve", CONSTANT)
    assert code == EXIT_OK
    scalars = read_manifest(out)["scalars"]
    assert "schrodinger_match" not in scalars
    for name, sup in scalars["residual_sup"].items():
        assert sup <= 1e-10, name
    rho = read_array(os.path.join(out, "field_rho.cgh1"))
    np.testing.assert_allclose(rho, 1 / 20.0, rtol=1e-12)


def test_evolve_is_deterministic(tmp_path):
    tree = {**PACKET, "physics": {"m": 1.0, "l_av": 0.3}}
    first = tmp_path / "a"
    second = tmp_path / "b"
    first.mkdir()
    second.mkdir()
    assert run(first, "evolve", tree)[0] == EXIT_OK
    assert run(second, "evolve", tree)[0] == EXIT_OK
    a = read_manifest(str(first / "out"))["files"]
    b = read_manifest(str(second / "out"))["files"]
    assert a["snapshots.cgh1"] == b["snapshots.cgh1"]
    assert a == b


def test_sweep_constant_state(tmp_path):
    code, out = run(tmp_path, "sweep", CONSTANT, "--threads", "2")
    assert code == EXIT_OK
    manifest = read_manifest(out)
    scalars = manifest["scalars"]
    assert scalars["stationary_candidates"] == [0.2, 0.3]
    assert scalars["failed_legs"] == []
    assert scalars["verdict"]["chosen_l"] == 0.2
    assert scalars["verdict"]["temperature"] == pytest.approx(12.5)
    assert manifest["config"]["budget"]["threads"] == 2
    with open(os.path.join(out, "sweep.csv")) as f:
        lines = f.read().splitlines()
    assert len(lines) == 5
    assert lines[0].startswith("l_av,")
    assert "temperature" in lines[0].split(",")
    assert {"sweep.csv", "balance.csv"} <= set(manifest["files"])


def test_diagnose_packet(tmp_path):
    tree = {**PACKET, "physics": {"m": 1.0, "l_av": 0.3}}
    code, out = run(tmp_path, "diagnose", tree)
    assert code == EXIT_OK
    scalars = read_manifest(out)["scalars"]
    assert scalars["temperature"] == pytest.approx(1 / (2 * 0.3**2))
    assert 0 < scalars["l_obs"] < 20.0
    assert scalars["pressure_min_eigenvalue"] >= -1e-12
    assert len(scalars["bound_lhs"]) == 2
    assert np.isfinite(scalars["lagrangian_hydro"])
    assert np.isfinite(scalars["lagrangian_wave"])
    assert np.isfinite(scalars["cell_averaged_quantum_force"])
