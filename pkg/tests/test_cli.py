import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qlandscape.cli import main
from qlandscape.io import example_config_path, load_config, read_control
from qlandscape.landscape import objective
from qlandscape.quantum_core import FOUR_LEVEL_H0, FOUR_LEVEL_H1


def read_rows(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def write_config(tmp_path, edit):
    data = json.loads(example_config_path().read_text())
    edit(data)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def bundle3(tmp_path_factory):
    out = tmp_path_factory.mktemp("b3")
    assert run("singular-gen", "--order", 2, "--seed", 3, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def t2_config(tmp_path_factory):
    data = json.loads(example_config_path().read_text())
    data["problem"]["T"] = 2.0
    data["problem"]["M"] = 512
    path = tmp_path_factory.mktemp("cfg") / "t2.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_shipped_config_matches_constants():
    cfg = load_config(example_config_path())
    np.testing.assert_array_equal(cfg.system.a0, -1j * FOUR_LEVEL_H0)
    np.testing.assert_array_equal(cfg.system.a1, -1j * FOUR_LEVEL_H1)
    np.testing.assert_array_equal(cfg.problem.psi0, [1, 0, 0, 0])
    np.testing.assert_array_equal(cfg.problem.psif, [0, 0, 0, 1])
    assert (cfg.problem.T, cfg.problem.M) == (10.0, 256)


def test_skew_input_convention(tmp_path):
    def edit(d):
        d["system"]["input_convention"] = "skew"
        for key, h in (("H0", FOUR_LEVEL_H0), ("H1", FOUR_LEVEL_H1)):
            a = -1j * h
            d["system"][key] = [[[z.real, z.imag] for z in row] for row in a]
    cfg = load_config(write_config(tmp_path, edit))
    np.testing.assert_array_equal(cfg.system.a1, -1j * FOUR_LEVEL_H1)


def test_simulate_zero_control(tmp_path):
    assert run("simulate", "--out", tmp_path) == 0
    header, data = read_rows(tmp_path / "trajectory.csv")
    assert header[0] == "t" and header[-1] == "J" and len(header) == 10
    assert data.shape == (257, 10)
    assert np.all(data[:, -1] == 0)


def test_simulate_tiny_duration(tmp_path):
    cfg = write_config(tmp_path, lambda d: d["problem"].update(T=1e-12, M=1))
    assert run("simulate", "--config", cfg, "--control", "constant:0.5", "--out", tmp_path) == 0
    _, data = read_rows(tmp_path / "trajectory.csv")
    assert data.shape[0] == 2
    np.testing.assert_allclose(data[-1, 1:9], [1, 0, 0, 0, 0, 0, 0, 0], atol=1e-10)


@pytest.mark.parametrize("edit, field", [
    (lambda d: d["system"]["H1"][0].__setitem__(1, [0.9, 0.0]), "system.H1"),
    (lambda d: d["system"].pop("H0"), "system.H0"),
    (lambda d: d["problem"].update(psi0=[[1, 0], [1, 0], [0, 0], [0, 0]]), "problem.psi0"),
    (lambda d: d["system"].update(dimension=3), "system.H0"),
    (lambda d: d["problem"].update(M=0), "problem.M"),
    (lambda d: d["system"].update(input_convention="other"), "system.input_convention"),
])
def test_malformed_config_exit_2(tmp_path, capsys, edit, field):
    cfg = write_config(tmp_path, edit)
    assert run("simulate", "--config", cfg, "--out", tmp_path) == 2
    assert field in capsys.readouterr().err


def test_unreadable_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("simulate", "--config", bad, "--out", tmp_path) == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_corank_constant_propagator(tmp_path):
    assert run("corank", "--map", "propagator", "--control", "constant:0.3", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "corank.json").read_text())
    assert rep["corank"] >= 3 and rep["ambient_dim"] == 16
    assert {"rank", "singular_values", "threshold", "spectral_gap"} <= rep.keys()


def test_corank_random_state(tmp_path):
    assert run("corank", "--map", "state", "--control", "random", "--out", tmp_path) == 0
    assert json.loads((tmp_path / "corank.json").read_text())["corank"] == 0


def test_corank_of_bundle(tmp_path, bundle3):
    assert run("corank", "--control", bundle3, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "corank.json").read_text())["corank"] >= 1


def test_corank_under_resolved(tmp_path, capsys):
    assert run("corank", "--grid-m", 4, "--out", tmp_path) == 2
    assert "M >= 7" in capsys.readouterr().err


def test_singular_gen_bundle(tmp_path):
    out = tmp_path / "b1"
    assert run("singular-gen", "--order", 2, "--seed", 1, "--out", out) == 0
    meta = json.loads((out / "seed.json").read_text())
    assert meta["max_residual"] <= 1e-6 and meta["order"] == 2 and meta["M"] == 256
    assert {"psi0", "phi0", "T", "rng_seed"} <= meta.keys()
    header, res = read_rows(out / "residuals.csv")
    assert header == ["t", "r1", "r2", "r3", "rk"]
    assert np.max(np.abs(res[:, 1:])) <= 1e-6
    assert read_rows(out / "control.csv")[0] == ["t", "epsilon"]


def test_singular_gen_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("singular-gen", "--seed", 1, "--out", tmp_path / name) == 0
    for f in ("control.csv", "residuals.csv", "seed.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_singular_gen_order_cap(tmp_path, capsys):
    assert run("singular-gen", "--order", 7, "--out", tmp_path) == 2
    assert "order 7" in capsys.readouterr().err


def test_singular_gen_arc_transition(tmp_path):
    assert run("singular-gen", "--seed", 0, "--out", tmp_path) == 4


def test_singular_gen_no_seed(tmp_path):
    def commuting(d):
        d["system"]["H1"] = [[[1.0 if i == j else 0.0, 0.0] for j in range(4)] for i in range(4)]
    cfg = write_config(tmp_path, commuting)
    assert run("singular-gen", "--config", cfg, "--out", tmp_path) == 3


def test_control_csv_round_trip(tmp_path):
    cfg = load_config(example_config_path())
    assert run("ascend", "--start", "random", "--max-iters", 3, "--out", tmp_path) == 0
    c = read_control(tmp_path / "final_control.csv")
    assert c.n_samples == 256 and c.duration == pytest.approx(10.0, abs=1e-14)
    _, trace = read_rows(tmp_path / "ascent.csv")
    assert objective(cfg.problem, c) == pytest.approx(trace[-1, 1], abs=1e-12)


def test_ascend_perturbed_bundle(tmp_path, bundle3):
    assert run("ascend", "--start", f"perturbed:{bundle3}:0.01", "--out", tmp_path) == 0
    header, trace = read_rows(tmp_path / "ascent.csv")
    assert header[-1] == "distance_to_reference"
    assert trace[-1, 1] >= 0.99
    assert trace[-1, -1] >= trace[0, -1]
    assert trace[0, -1] <= 0.01


def test_ascend_random_monotone_and_converged_restart(tmp_path):
    assert run("ascend", "--start", "random", "--max-iters", 300, "--out", tmp_path / "a") == 0
    _, trace = read_rows(tmp_path / "a" / "ascent.csv")
    assert np.all(np.diff(trace[:, 1]) >= 0)
    assert run("ascend", "--start", "random", "--out", tmp_path / "b") == 0
    assert run("ascend", "--start", tmp_path / "b" / "final_control.csv", "--out", tmp_path / "c") == 0
    _, trace = read_rows(tmp_path / "c" / "ascent.csv")
    assert trace.shape[0] == 1


def test_ascend_bad_start(tmp_path, capsys):
    assert run("ascend", "--start", "perturbed:nowhere", "--out", tmp_path) == 2
    assert run("ascend", "--start", "missing.csv", "--out", tmp_path) == 2


def test_classify_zero_control(tmp_path):
    assert run("classify", "--control", "zero", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "classification.json").read_text())
    assert rep["classification"] in ("RegularKinematic", "SingularKinematic")
    assert rep["tolerances"] == {"crit_tol": 1e-6, "kin_tol": 1e-6, "threshold_rel": 1e-8}


def test_classify_tolerance_override(tmp_path):
    assert run("classify", "--crit-tol", 1e-3, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "classification.json").read_text())
    assert rep["tolerances"]["crit_tol"] == 1e-3


def test_classify_backward_bundle_nonkinematic(tmp_path, t2_config):
    bundle = tmp_path / "back"
    assert run("singular-gen", "--from-surface", "--seed", 1, "--config", t2_config,
               "--out", bundle) == 0
    assert json.loads((bundle / "seed.json").read_text())["direction"] == "backward"
    assert run("classify", "--control", bundle, "--config", t2_config, "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "classification.json").read_text())
    assert rep["classification"] == "Nonkinematic"


def test_classify_mid_ascent(tmp_path):
    assert run("ascend", "--start", "random", "--max-iters", 10, "--out", tmp_path) == 0
    assert run("classify", "--control", tmp_path / "final_control.csv", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "classification.json").read_text())
    assert rep["classification"] == "NotCritical"


def test_bad_control_csv(tmp_path, capsys):
    bad = tmp_path / "c.csv"
    bad.write_text("time,value\n0.5,1\n")
    assert run("classify", "--control", bad, "--out", tmp_path) == 2
    assert "t,epsilon" in capsys.readouterr().err


def test_experiment_zero_radius(tmp_path):
    assert run("experiment-fig3", "--radius", 0, "--n-trials", 1, "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["fraction_reached"] is None
    assert summary["n_stalled"] == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "qlandscape", "singular-gen", "--order", "9",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "order" in proc.stderr
