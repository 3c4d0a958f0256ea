import hashlib
import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from alignflow.cli import list_scenarios, main, shipped_scenarios_dir
from alignflow.config import canonical_json, parse_config, resolve
from alignflow.errors import ConfigError
from alignflow.runner import run

SMALL_PARTICLES = {
    "name": "tiny",
    "mode": "particles",
    "seed": 1,
    "kernel": {"name": "smoothed_norm", "params": {"epsilon": 0.5}, "dim": 1},
    "initial": {"generator": "uniform", "n": 6},
    "integrator": {"dt": 0.01, "t_end": 0.2, "record_every": 5},
}


def _write(path, obj):
    path.write_text(json.dumps(obj, indent=2))
    return path


# -- config parsing -------------------------------------------------------------

def test_schema_error_reports_line():
    text = '{\n  "name": "x",\n  "mode": "particles",\n  "seed": 1,\n  "integrator": {\n    "dt": -0.5\n  }\n}\n'
    with pytest.raises(ConfigError) as info:
        parse_config(text, "cfg.json")
    assert "cfg.json:6:" in str(info.value)
    assert "integrator/dt" in str(info.value)


def test_unknown_key_reports_line():
    text = '{"name": "x",\n "mode": "grid",\n "colour": 3}'
    with pytest.raises(ConfigError) as info:
        parse_config(text, "c")
    assert str(info.value).startswith("c:1:")
    assert "colour" in str(info.value)


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError) as info:
        parse_config('{\n "name": "x",\n "mode": }', "bad.json")
    assert "bad.json:3:" in str(info.value)


def test_random_generator_needs_seed():
    cfg = dict(SMALL_PARTICLES)
    cfg.pop("seed")
    with pytest.raises(ConfigError):
        resolve(cfg)
    assert resolve(cfg, seed=4)["seed"] == 4


def test_dt_guard_enforced():
    cfg = json.loads(json.dumps(SMALL_PARTICLES))
    cfg["integrator"]["dt"] = 0.5  # guard is 0.5 / (1 / eps) = 0.25
    with pytest.raises(ConfigError):
        resolve(cfg)


def test_stability_needs_quadratic_kernel():
    with pytest.raises(ConfigError):
        resolve({"name": "s", "mode": "stability", "kernel": {"name": "smoothed_norm", "params": {"epsilon": 1}},
                 "stability": {"deltas": [0.1]}})


def test_resolve_fills_defaults_and_drops_output_dir():
    cfg = resolve({"name": "g", "mode": "grid", "output_dir": "somewhere"})
    assert "output_dir" not in cfg
    assert cfg["initial"]["M"] == 256
    assert cfg["integrator"]["cfl"] == 0.4


# -- runs and manifests ------------------------------------------------------------

def _manifest_bytes(out):
    return (Path(out) / "manifest.json").read_bytes()


def test_manifest_hashes_match_files(tmp_path):
    res = run(resolve(SMALL_PARTICLES), tmp_path)
    for name, digest in res.manifest["files"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    assert set(os.listdir(tmp_path)) == set(res.manifest["files"]) | {"manifest.json"}
    assert res.manifest["tool"]["name"] == "alignflow"


def test_rerun_is_byte_identical(tmp_path):
    run(resolve(SMALL_PARTICLES), tmp_path / "a")
    run(resolve(SMALL_PARTICLES), tmp_path / "b")
    assert _manifest_bytes(tmp_path / "a") == _manifest_bytes(tmp_path / "b")


def test_resolved_config_round_trip(tmp_path):
    run(resolve(SMALL_PARTICLES), tmp_path / "a")
    again = parse_config((tmp_path / "a" / "config.resolved.json").read_text())
    run(resolve(again), tmp_path / "b")
    assert _manifest_bytes(tmp_path / "a") == _manifest_bytes(tmp_path / "b")


def test_seed_changes_output(tmp_path):
    run(resolve(SMALL_PARTICLES), tmp_path / "a")
    run(resolve(SMALL_PARTICLES, seed=2), tmp_path / "b")
    a = json.loads(_manifest_bytes(tmp_path / "a"))
    b = json.loads(_manifest_bytes(tmp_path / "b"))
    assert a["files"]["trajectory.csv"] != b["files"]["trajectory.csv"]


def test_outputs_are_lf_csv_and_sorted_json(tmp_path):
    run(resolve(SMALL_PARTICLES), tmp_path)
    traj = (tmp_path / "trajectory.csv").read_bytes()
    assert b"\r" not in traj
    assert traj.splitlines()[0] == b"t,atom_id,x0,u0,w0"
    summary = (tmp_path / "summary.json").read_text()
    assert summary == canonical_json(json.loads(summary))


def test_metrics_mode(tmp_path):
    cfg = {"name": "m", "mode": "metrics", "metrics": {
        "a": {"dim": 1, "points": [[0.0]], "weights": [1.0]},
        "b": {"dim": 1, "points": [[0.5]], "weights": [1.0]}}}
    res = run(resolve(cfg), tmp_path)
    out = json.loads((tmp_path / "metrics.json").read_text())
    assert set(out) == {"flat", "w1", "w2", "tv"}
    assert out["flat"] == pytest.approx(0.5) and out["w2"] == pytest.approx(0.5) and out["tv"] == 2.0
    assert res.summary == out


def test_study_thread_count_does_not_change_output(tmp_path, monkeypatch):
    cfg = resolve({"name": "vv", "mode": "vanishing_viscosity", "initial": {"M": 64},
                   "study": {"N_list": [20, 40], "t_probe": 0.3}})
    monkeypatch.setenv("SIM_THREADS", "1")
    run(cfg, tmp_path / "a")
    monkeypatch.setenv("SIM_THREADS", "2")
    run(cfg, tmp_path / "b")
    assert _manifest_bytes(tmp_path / "a") == _manifest_bytes(tmp_path / "b")
    rows = (tmp_path / "a" / "convergence.csv").read_text().splitlines()
    assert rows[0] == "N,flat,w2,energy,defect,energy_gap_to_reference,error"
    assert len(rows) == 3


# -- catalogue -------------------------------------------------------------------

def test_shipped_catalogue():
    names = {e["name"] for e in list_scenarios()}
    assert len(names) >= 6
    assert {"two_clusters_quadratic", "psd_smoothed_norm_cloud", "non_even_negative_control", "viscous_bump",
            "viscosity_sweep", "stability_sweep"} <= names
    for path in shipped_scenarios_dir().glob("*.json"):
        resolve(parse_config(path.read_text(), str(path)))


def test_empty_catalogue(tmp_path, capsys):
    assert list_scenarios(tmp_path) == []
    assert main(["list", "--dir", str(tmp_path)]) == 0
    assert capsys.readouterr().out == ""


def test_malformed_scenario_is_marked(tmp_path, capsys):
    (tmp_path / "broken.json").write_text("{not json")
    _write(tmp_path / "ok.json", {"name": "ok", "mode": "grid", "description": "fine"})
    assert main(["list", "--dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("broken.json\t[PARSE ERROR]")
    assert out[1] == "ok\tgrid\tfine"


# -- CLI exit codes ------------------------------------------------------------------

def test_cli_run_success(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", SMALL_PARTICLES)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "manifest.json").exists()


def test_cli_config_error(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {"name": "x", "mode": "nonsense"})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "c.json:3: mode" in capsys.readouterr().err


def test_cli_numerical_error(tmp_path, capsys):
    cfg = _write(tmp_path / "c.json", {"name": "blowup", "mode": "grid", "initial": {"M": 64},
                                       "integrator": {"dt": 0.5, "t_end": 1.0}})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "blowup" in err and "CFL" in err


def test_cli_io_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.json")]) == 3
    cfg = _write(tmp_path / "c.json", SMALL_PARTICLES)
    (tmp_path / "file").write_text("")
    assert main(["run", str(cfg), "--out", str(tmp_path / "file")]) == 3


def test_cli_metrics(tmp_path, capsys):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(json.dumps({"dim": 1, "points": [[0.0], [1.0]], "weights": [0.5, 0.5]}))
    b.write_text(json.dumps({"dim": 1, "points": [[0.0], [2.0]], "weights": [0.5, 0.5]}))
    assert main(["metrics", str(a), str(b)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["w2"] == pytest.approx(2**-0.5)


def test_cli_validate_kernel(tmp_path, capsys):
    good = _write(tmp_path / "g.json", {"name": "quadratic", "dim": 2})
    bad = _write(tmp_path / "b.json", {"name": "gaussian_bump", "params": {"sigma": 1}, "flags": {"psd": True}})
    assert main(["validate-kernel", str(good)]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True
    assert main(["validate-kernel", str(bad)]) == 2
    report = json.loads(capsys.readouterr().out)
    assert [c for c in report["checks"] if c["name"] == "psd"][0]["passed"] is False


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "alignflow.cli", "list"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "two_clusters_quadratic" in out.stdout
