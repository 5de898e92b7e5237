from __future__ import annotations

import json

import numpy as np
import pytest

from stickymfg import fixtures, io
from stickymfg.cli import build_parser, main
from stickymfg.errors import ConfigError
from stickymfg.fokker_planck import solve_stationary
from stickymfg.network import EdgeField, build_network


@pytest.fixture
def star_file(tmp_path):
    path = tmp_path / "star.json"
    path.write_text(json.dumps(fixtures.sticky_star(33)))
    return path


@pytest.fixture
def net():
    return build_network(fixtures.asymmetric_star(17))


def test_field_round_trip_is_bit_identical(tmp_path, net):
    rng = np.random.default_rng(0)
    f = EdgeField(tuple(rng.normal(size=e.n_points) * 10.0 ** rng.integers(-8, 8) for e in net.edges))
    io.write_field_csv(tmp_path / "f.csv", f, net)
    g = io.read_field_csv(tmp_path / "f.csv", net)
    assert all(np.array_equal(a, b) for a, b in zip(f, g))


def test_measure_round_trip(tmp_path, net):
    m = solve_stationary(EdgeField.zeros(net), net).measure
    io.write_measure(tmp_path / "m.csv", tmp_path / "a.json", m, net)
    back = io.read_measure(tmp_path / "m.csv", tmp_path / "a.json", net)
    assert all(np.array_equal(a, b) for a, b in zip(m.density, back.density))
    assert back.atoms == m.atoms


def test_csv_grid_mismatch_is_rejected(tmp_path, net):
    io.write_field_csv(tmp_path / "f.csv", EdgeField.zeros(net), net)
    with pytest.raises(ConfigError):
        io.read_field_csv(tmp_path / "f.csv", net.with_grid(9))
    with pytest.raises(ConfigError):
        io.read_field_csv(tmp_path / "missing.csv", net)


def test_json_is_stable():
    text = io.dumps({"b": 1.0, "a": np.float64(0.5), "c": [np.int64(2)]})
    assert text == '{\n  "a": 0.5,\n  "b": 1.0,\n  "c": [\n    2\n  ]\n}\n'


def test_parse_fp_zero_drift(star_file):
    args = build_parser().parse_args(["fp", "--net", str(star_file), "--drift", "zero"])
    assert args.command == "fp" and args.drift == "zero"


@pytest.mark.parametrize("argv", [
    ["mfg", "--net", "{net}", "--tol", "-1"],
    ["hjb", "--net", "{net}", "--lambda", "0"],
    ["mfg", "--net", "{net}", "--damping", "1.5"],
    ["fp", "--net", "nowhere.json"],
    ["fp", "--net", "{net}", "--drift", "nowhere.csv"],
    ["hjb", "--net", "{net}", "--lambda", "1", "--hamiltonian", "cubic"],
])
def test_usage_errors_exit_1(argv, star_file, tmp_path, capsys):
    argv = [a.format(net=star_file) for a in argv] + ["--out-dir", str(tmp_path)]
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_fp_outputs(star_file, tmp_path):
    assert main(["fp", "--net", str(star_file), "--out-dir", str(tmp_path)]) == 0
    atoms = json.loads((tmp_path / "vertex_atoms.json").read_text())
    assert atoms["c"] == pytest.approx(1 / 3)
    lines = (tmp_path / "measure.csv").read_text().splitlines()
    assert lines[0] == "edge_id,s,value" and len(lines) == 1 + 2 * 33
    cfg = json.loads((tmp_path / "effective_config.json").read_text())
    assert cfg["drift"] == "zero" and cfg["command"] == "fp"


def test_hjb_and_ergodic_outputs(star_file, tmp_path):
    assert main(["hjb", "--net", str(star_file), "--lambda", "1", "--F", "const:2", "--out-dir", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "effective_config.json").read_text())["lambda"] == 1.0
    u = io.read_field_csv(tmp_path / "u.csv", build_network(fixtures.sticky_star(33)))
    assert np.isfinite(u.max_abs())
    out = tmp_path / "erg"
    assert main(["ergodic", "--net", str(star_file), "--F", "const:2", "--out-dir", str(out)]) == 0
    assert (out / "u.csv").exists() and "rho" in json.loads((out / "rho.json").read_text())


def test_hjb_reads_field_csv_and_control_model(star_file, tmp_path):
    net = build_network(fixtures.sticky_star(33))
    io.write_field_csv(tmp_path / "F.csv", EdgeField.from_function(net, lambda a, s: np.cos(s)), net)
    (tmp_path / "model.json").write_text(json.dumps({"bound": 5.0, "drift": [0, 1], "cost": [0, 0, 0.5]}))
    argv = ["hjb", "--net", str(star_file), "--lambda", "1", "--F", str(tmp_path / "F.csv"),
            "--hamiltonian", f"control:{tmp_path / 'model.json'}", "--out-dir", str(tmp_path / "a")]
    assert main(argv) == 0
    argv[-1] = str(tmp_path / "b")
    argv[argv.index("--hamiltonian") + 1] = "quadratic"
    assert main(argv) == 0
    assert (tmp_path / "a" / "u.csv").read_bytes() != b""
    ua = io.read_field_csv(tmp_path / "a" / "u.csv", net)
    ub = io.read_field_csv(tmp_path / "b" / "u.csv", net)
    assert (ua - ub).max_abs() <= 1e-12


def test_mfg_outputs(star_file, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"edge": "identity", "vertex": "identity", "monotone": "strict"}))
    assert main(["mfg", "--net", str(star_file), "--coupling", str(tmp_path / "c.json"), "--out-dir",
                 str(tmp_path / "r")]) == 0
    for name in ("u.csv", "m.csv", "atoms.json", "rho.json", "history.csv", "effective_config.json"):
        assert (tmp_path / "r" / name).exists()
    assert (tmp_path / "r" / "history.csv").read_text().startswith("iteration,gap,rho\n")


def test_simulate_outputs_and_determinism(star_file, tmp_path):
    argv = ["simulate", "--net", str(star_file), "--T", "50", "--burn-in", "5", "--ntraj", "3", "--seed", "7"]
    assert main(argv + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "occ.csv").read_bytes()
    assert a.splitlines()[0] == b"edge_id,s,value,stderr"
    assert a == (tmp_path / "b" / "occ.csv").read_bytes()
    assert (tmp_path / "a" / "occ_vertices.json").read_bytes() == (tmp_path / "b" / "occ_vertices.json").read_bytes()


def test_verify_hjb_output(star_file, tmp_path):
    assert main(["verify-hjb", "--net", str(star_file), "--lambda", "1", "--F", "const:1", "--x0", "edge:e1:0.5",
                 "--ntraj", "50", "--out-dir", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "verify.json").read_text())
    assert {"u_pde", "J_mc", "stderr"} <= set(out)
    assert main(["verify-hjb", "--net", str(star_file), "--lambda", "1", "--x0", "edge:nope:0.5",
                 "--out-dir", str(tmp_path)]) == 1


def test_invalid_network_exits_3(tmp_path):
    spec = fixtures.sticky_star(33)
    spec["edges"][0]["gamma_from"] = 0.7
    spec["edges"][1]["gamma_from"] = 0.7
    (tmp_path / "bad.json").write_text(json.dumps(spec))
    assert main(["fp", "--net", str(tmp_path / "bad.json"), "--out-dir", str(tmp_path)]) == 3


def test_solver_failure_exits_2(star_file, tmp_path):
    assert main(["mfg", "--net", str(star_file), "--max-iter", "1", "--out-dir", str(tmp_path)]) == 2


def test_selftest_quick_passes(tmp_path, capsys):
    assert main(["selftest", "quick", "--out-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "selftest_report.json").read_text())
    assert report["passed"] and [c["number"] for c in report["criteria"]] == [1, 2, 3, 4]
    assert "selftest quick: PASS" in capsys.readouterr().out


def test_selftest_flags_corrupted_gamma(tmp_path, capsys):
    spec = fixtures.sticky_star(65)
    spec["edges"][0]["gamma_from"] = 0.7
    spec["edges"][1]["gamma_from"] = 0.7
    (tmp_path / "bad.json").write_text(json.dumps(spec))
    code = main(["selftest", "quick", "--fixture", f"sticky_star={tmp_path / 'bad.json'}", "--out-dir", str(tmp_path)])
    assert code == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and "H1 violation" in out
