import csv
import json

import numpy as np
import pytest

from mvdiv.cli import RunManifest, main, parse_grid, ConfigError
from mvdiv.closed_form import solve_barrier
from mvdiv.model import ModelParams

from conftest import FIG1, MAXRATE


@pytest.fixture
def write_cfg(tmp_path):
    def make(**cfg):
        f = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*.json')))}.json"
        f.write_text(json.dumps(cfg))
        return f
    return make


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# manifest sha256=")
    return list(csv.DictReader(lines[1:]))


def test_solve_barrier(write_cfg, tmp_path, capsys):
    assert run("solve", "--config", write_cfg(**FIG1), "--out", tmp_path) == 0
    out = json.loads((tmp_path / "solution.json").read_text())
    assert out["regime"] == "Barrier" and out["x_tilde"] > 0
    assert abs(out["f_residual"]) <= 1e-12
    assert {"C1", "C3", "C6", "C8"} <= set(out)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert out["manifest"] == man["digest"]


def test_solve_max_rate(write_cfg, tmp_path):
    assert run("solve", "--config", write_cfg(**MAXRATE), "--out", tmp_path) == 0
    out = json.loads((tmp_path / "solution.json").read_text())
    assert out["regime"] == "MaxRate" and "x_tilde" not in out
    assert 0.6 <= out["eps_tilde"] <= 0.7


def test_solve_unresolved(write_cfg, tmp_path, capsys):
    assert run("solve", "--config", write_cfg(**(MAXRATE | {"gamma": 10})), "--out", tmp_path) == 3
    assert "unresolved" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    FIG1 | {"b": 0},
    FIG1 | {"gamma": -0.1},
    FIG1 | {"sim": {"dt": -1}},
    FIG1 | {"sim": {"paths": 10}},
    FIG1 | {"bogus": 1},
    {"a": 0.1},
    FIG1 | {"strategy": {"type": "barrier"}},
])
def test_config_errors_exit_2(write_cfg, tmp_path, cfg):
    assert run("simulate", "--config", write_cfg(**cfg), "--out", tmp_path) == 2


def test_missing_and_malformed_config(tmp_path):
    assert run("solve", "--config", tmp_path / "nope.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("solve", "--config", bad) == 2


def test_sweep_gamma_grid(write_cfg, tmp_path):
    f = write_cfg(**FIG1, gamma_grid={"start": 0, "stop": 0.4, "step": 0.02})
    assert run("sweep", "--config", f, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert len(rows) == 21
    assert list(rows[0]) == ["gamma", "x_tilde", "status"]
    xs = np.array([float(r["x_tilde"]) for r in rows])
    assert np.all(np.diff(xs) < 0) or np.all(np.diff(xs) > 0)


def test_sweep_dbar_grid_marks_not_found(write_cfg, tmp_path):
    f = write_cfg(**FIG1 | {"gamma": 0.0}, dbar_grid=[0.02, 0.05, 0.1])
    assert run("sweep", "--config", f, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0]["status"] == "NotFound" and rows[0]["x_tilde"] == ""
    assert float(rows[2]["x_tilde"]) > float(rows[1]["x_tilde"]) > 0


def test_sweep_single_point_matches_solve(write_cfg, tmp_path):
    f = write_cfg(**FIG1, gamma_grid=[0.2])
    assert run("sweep", "--config", f, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert float(rows[0]["x_tilde"]) == solve_barrier(ModelParams(**FIG1))


@pytest.mark.parametrize("grid", [[], {"start": 0, "stop": 1}, {"start": 1, "stop": 0, "step": 0.1},
                                  {"start": 0, "stop": 1, "step": 0}, "0:1", ["x"]])
def test_sweep_bad_grid(write_cfg, tmp_path, grid):
    assert run("sweep", "--config", write_cfg(**FIG1, gamma_grid=grid), "--out", tmp_path) == 2


def test_sweep_needs_one_grid(write_cfg, tmp_path):
    assert run("sweep", "--config", write_cfg(**FIG1), "--out", tmp_path) == 2
    f = write_cfg(**FIG1, gamma_grid=[0.1], dbar_grid=[0.05])
    assert run("sweep", "--config", f, "--out", tmp_path) == 2


def test_parse_grid():
    assert parse_grid({"start": 0, "stop": 0.1, "step": 0.05}, "g") == [0.0, 0.05, 0.1]
    with pytest.raises(ConfigError):
        parse_grid([float("nan")], "g")


def test_eval_closed_form_and_oracle(write_cfg, tmp_path):
    f = write_cfg(**FIG1, x_grid={"start": 0, "stop": 1, "step": 0.25})
    assert run("eval", "--config", f, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "eval.csv")
    assert list(rows[0]) == ["x", "G", "H", "V"] and len(rows) == 5
    assert float(rows[0]["G"]) == 0.0
    grid = read_csv(tmp_path / "oracle_grid.csv")
    assert list(grid[0]) == ["x", "G", "H", "V", "residual", "argmax_d"]


def test_eval_tabulated_strategy(write_cfg, tmp_path):
    (tmp_path / "s.csv").write_text("x,rate\n0.2,0\n0.5,0.02\n")
    f = write_cfg(**FIG1, strategy={"type": "tabulated", "path": "s.csv", "extrapolate": 0.05},
                  x_grid=[0.1, 0.3, 1.0])
    assert run("eval", "--config", f, "--out", tmp_path / "o") == 0
    rows = read_csv(tmp_path / "o" / "eval.csv")
    G = [float(r["G"]) for r in rows]
    assert 0 < G[0] < G[1] < G[2] < 1.0


def test_simulate_outputs_and_reproducibility(write_cfg, tmp_path, monkeypatch):
    f = write_cfg(**FIG1, x0=0.3, sim={"n_paths": 300, "dt": 0.005, "seed": 1, "t_max": 20,
                                       "truncation_tol": 1.0})
    assert run("simulate", "--config", f, "--out", tmp_path / "a") == 0
    monkeypatch.setenv("MVDIV_THREADS", "1")
    assert run("simulate", "--config", f, "--out", tmp_path / "b", "--paths", 300) == 0
    for name in ("paths.csv", "summary.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = read_csv(tmp_path / "a" / "paths.csv")
    assert list(rows[0]) == ["path_index", "Y", "ruin_time", "censored"] and len(rows) == 300
    assert run("simulate", "--config", f, "--out", tmp_path / "c", "--seed", 2) == 0
    assert (tmp_path / "a" / "paths.csv").read_bytes() != (tmp_path / "c" / "paths.csv").read_bytes()


def test_manifest_digest_covers_fields():
    m = RunManifest("simulate", {"a": 1}, "abc", {}, 1)
    assert m.digest != RunManifest("simulate", {"a": 1}, "abc", {}, 2).digest
    assert m.digest == RunManifest("simulate", {"a": 1}, "abc", {}, 1).digest


FAST_VERIFY = {"checks": ["smooth_pasting", "hjb_residual", "ode_oracle"]}


def test_verify_fast_checks(write_cfg, tmp_path):
    assert run("verify", "--config", write_cfg(**FIG1, verify=FAST_VERIFY), "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["verdict"] == "PASS" and [c["name"] for c in rep["checks"]] == FAST_VERIFY["checks"]


def test_verify_detects_corrupted_constant(write_cfg, tmp_path, capsys):
    f = write_cfg(**FIG1, verify=FAST_VERIFY)
    assert run("verify", "--config", f, "--out", tmp_path, "--debug-corrupt-c1") == 1
    assert "smooth_pasting" in capsys.readouterr().out
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert "smooth_pasting" in rep["failed"]


def test_verify_unknown_check(write_cfg, tmp_path):
    f = write_cfg(**FIG1, verify={"checks": ["vibes"]})
    assert run("verify", "--config", f, "--out", tmp_path) == 2


@pytest.mark.slow
@pytest.mark.parametrize("cfg", [FIG1, MAXRATE], ids=["barrier", "max_rate"])
def test_verify_default_budgets(write_cfg, tmp_path, cfg):
    assert run("verify", "--config", write_cfg(**cfg), "--out", tmp_path) == 0
