from __future__ import annotations

import json

import pytest

from reachavoid.cli import main

SMALL = {
    "model": "zermelo",
    "params": {"a": 0.04, "V_S": 0.6, "sigma_x": 0.5, "sigma_y": 0.2, "n_alpha": 16},
    "grid": {"origin": [-3.0, -3.0], "spacing": [0.2, 0.2], "shape": [31, 31]},
    "horizon_T": 1.0,
    "eps_cells": 2,
    "target": {"type": "disk", "center": [0.0, 0.0], "radius": 1.0},
    "avoid": {"type": "halfplane", "normal": [1.0, 0.0], "offset": 2.2},
}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "small.json"
    cfg.write_text(json.dumps(SMALL))
    out = base / "solved"
    code = main(["solve", str(cfg), "--out-dir", str(out)])
    return base, cfg, out, code


def test_solve_writes_artifacts(small_run):
    _, _, out, code = small_run
    assert code == 0
    man = json.loads((out / "run_manifest.json").read_text())
    assert man["subcommand"] == "solve" and man["tool"] == "reachavoid"
    assert "manifest.json" in man["outputs"] and "value/slice_00000.csv" in man["outputs"]
    field = json.loads((out / "manifest.json").read_text())
    assert field["K"] * field["dt"] == pytest.approx(1.0)


def test_missing_scenario_is_io_error(tmp_path, capsys):
    assert main(["solve", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "io" and err["exit_code"] == 2


def test_bad_parameters(tmp_path, small_run):
    _, cfg, out, _ = small_run
    assert main(["solve", str(cfg), "--eps", "0.01", "--out-dir", str(tmp_path / "a")]) == 3
    bad = dict(SMALL, params=dict(SMALL["params"], sigma_x=0.0))
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert main(["solve", str(tmp_path / "bad.json"), "--out-dir", str(tmp_path / "b")]) == 3
    (tmp_path / "junk.json").write_text("{")
    assert main(["solve", str(tmp_path / "junk.json"), "--out-dir", str(tmp_path / "c")]) == 3
    assert main(["levelset", str(out), "--p", "1.2", "--out-dir", str(tmp_path / "d")]) == 3
    assert main(["levelset", str(out), "--times", "", "--out-dir", str(tmp_path / "e")]) == 3
    assert main(["epsladder", str(cfg), "--eps-list", "2,3", "--out-dir", str(tmp_path / "f")]) == 3
    assert main(["bogus"]) == 3


def test_validate_small(small_run, tmp_path):
    _, _, out, _ = small_run
    code = main(["validate", str(out), "--n-paths", "2000", "--n-probes", "3", "--audit-paths", "100",
                 "--out-dir", str(tmp_path / "v")])
    rep = json.loads((tmp_path / "v" / "validation.json").read_text())
    assert len(rep["probes"]) == 3 and rep["audit"]["ok"]
    assert code == (0 if all(r["in_band"] for r in rep["probes"]) else 5)
    header = (tmp_path / "v" / "validation.csv").read_text().splitlines()[0]
    assert header.startswith("x,y,t,V_pde,V_mc")


def test_levelset_and_audit(small_run, tmp_path):
    _, _, out, _ = small_run
    code = main(["levelset", str(out), "--p", "0.5", "--times", "0,0.5T,T", "--out-dir", str(tmp_path / "l")])
    assert code in (0, 5)
    files = sorted(p.name for p in (tmp_path / "l").iterdir())
    assert any(f.endswith(".geojson") for f in files)
    assert main(["audit", str(out), "--n-starts", "3", "--n-paths", "50", "--out-dir", str(tmp_path / "a")]) == 0


def test_epsladder_small(small_run, tmp_path):
    _, cfg, _, _ = small_run
    code = main(["epsladder", str(cfg), "--eps-list", "3,2.5,2", "--out-dir", str(tmp_path / "e")])
    assert code in (0, 5)
    assert (tmp_path / "e" / "run_manifest.json").is_file()


def test_binary_format(small_run, tmp_path):
    _, cfg, _, _ = small_run
    out = tmp_path / "bin"
    assert main(["solve", str(cfg), "--format", "binary", "--out-dir", str(out)]) == 0
    assert (out / "value.bin").is_file() and (out / "policy.bin").is_file()
    assert main(["levelset", str(out), "--p", "0.5", "--out-dir", str(tmp_path / "l")]) in (0, 5)


@pytest.mark.filterwarnings("ignore:loadtxt")
def test_corrupt_value_dir(small_run, tmp_path):
    _, cfg, _, _ = small_run
    out = tmp_path / "c"
    assert main(["solve", str(cfg), "--out-dir", str(out)]) == 0
    (out / "value" / "slice_00001.csv").write_text("garbage\n")
    assert main(["levelset", str(out), "--out-dir", str(tmp_path / "l")]) == 4
    assert main(["levelset", str(tmp_path / "missing")]) == 2


def test_rerun_reproduces_outputs(small_run, tmp_path):
    _, _, out, _ = small_run
    first = json.loads((out / "run_manifest.json").read_text())
    assert main(["rerun", str(out / "run_manifest.json"), "--out-dir", str(tmp_path / "r"), "--threads", "2"]) == 0
    second = json.loads((tmp_path / "r" / "run_manifest.json").read_text())
    assert first["outputs"] == second["outputs"]
    assert main(["rerun", str(tmp_path / "none.json")]) == 2
