import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from spinflow import cli
from spinflow.grid import load_field


def run_cli(tmp_path, config, *extra, name="out"):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / name
    code = cli.main(["--config", str(cfg_path), "--output", str(out), *extra])
    return code, out


SMALL_FLOW = {"command": "flow", "grid": {"n": 2, "res": 16}, "flow": {"steps": 5}}


def test_verify_defaults_pass(tmp_path):
    code, out = run_cli(tmp_path, {"command": "verify"})
    assert code == 0
    rep = json.loads((out / "verify.json").read_text())
    assert rep["all_passed"] and rep["n_checks"] >= 12
    assert rep["config"]["grid"] == {"n": 2, "res": 64} and len(rep["config"]["seeds"]) == 5


def test_verify_three_dimensions(tmp_path):
    code, out = run_cli(tmp_path, {"command": "verify", "grid": {"n": 3, "res": 32}, "seeds": [0]})
    assert code == 0
    names = {c["name"] for c in json.loads((out / "verify.json").read_text())["checks"]}
    assert "gauss_bonnet" not in names and "weitzenbock" in names


@pytest.mark.parametrize("c", [0.5, 1.0])
def test_flow_refuses_backward_regime(tmp_path, capsys, c):
    code, out = run_cli(tmp_path, {**SMALL_FLOW, "constants": {"tau": 1.0, "c": c}})
    assert code == 2
    assert "backward parabolic" in capsys.readouterr().err
    assert not (out / "flow.json").exists()


def test_critical_flow_is_stationary(tmp_path):
    code, out = run_cli(tmp_path, {**SMALL_FLOW, "flow": {"steps": 5, "start": "critical"}})
    assert code == 0
    lines = (out / "flow.csv").read_text().splitlines()
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 6
    assert len({r["W_lambda"] for r in rows}) == 1
    g, grid, kind = load_field(out / "final_g")
    assert kind == "sym2" and grid.res == 16 and np.allclose(g[0, 0], 1.0)


def test_flow_artifacts_deterministic_and_hashed(tmp_path):
    code_a, a = run_cli(tmp_path, SMALL_FLOW, name="a")
    code_b, b = run_cli(tmp_path, SMALL_FLOW, name="b")
    assert code_a == code_b == 0
    for name in ("flow.json", "flow.csv", "final_psi.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rep = json.loads((a / "flow.json").read_text())
    meta = json.loads((a / "flow.meta.json").read_text())
    assert rep["config_hash"] == meta["config_hash"]
    assert (a / "flow.csv").read_text().startswith(f"# config_hash={rep['config_hash']}")
    assert "finished_utc" not in rep and "finished_utc" in meta
    assert "normalization_preserved" in rep and "mass_drift" in rep


def test_config_hash_ignores_output_dir_only():
    base = cli.resolve_config({}, output="x")
    assert cli.config_hash(base) == cli.config_hash(cli.resolve_config({}, output="y"))
    assert cli.config_hash(base) != cli.config_hash(cli.resolve_config({"amp": 0.04}))


@pytest.mark.parametrize("config", [
    {"grid": {"n": 4}},
    {"grid": {"res": 12}},
    {"unknown": 1},
    {"constants": {"tau": 0}},
    {"amp": 0.5},
    {"command": "dance"},
])
def test_invalid_config_exit_2(tmp_path, capsys, config):
    code, _ = run_cli(tmp_path, config)
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_malformed_json_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert cli.main(["--config", str(p)]) == 2


def test_symbols_n3_is_config_error(tmp_path):
    code, _ = run_cli(tmp_path, {"command": "symbols", "grid": {"n": 3, "res": 16}})
    assert code == 2


def test_overrides():
    cfg = cli.resolve_config({"seeds": [1, 2]}, command="spectrum", output="o", seed=7)
    assert cfg["command"] == "spectrum" and cfg["output_dir"] == "o" and cfg["seeds"] == [7]
    assert cfg["constants"] == cli.DEFAULTS["constants"]


def test_variation_command(tmp_path):
    code, out = run_cli(tmp_path, {"command": "variation", "grid": {"n": 2, "res": 16}, "seeds": [0]})
    assert code == 0
    rep = json.loads((out / "variation.json").read_text())
    assert abs(rep["cases"][0]["order"] - 2) < 0.2


def test_spectrum_command(tmp_path):
    code, out = run_cli(tmp_path, {"command": "spectrum", "spectrum": {"res": 8, "samples": 2}})
    assert code == 0
    rep = json.loads((out / "spectrum.json").read_text())
    assert len(rep["friedrich_samples"]) == 2


def test_symbols_command_reports_failures(tmp_path):
    code, out = run_cli(tmp_path, {"command": "symbols", "symbols": {"N": [2, 4], "pairing_samples": 5}})
    rep = json.loads((out / "symbols.json").read_text())
    failing = {c["name"] for c in rep["checks"] if not c["passed"]}
    assert code == 1
    assert failing == {"symbol_KosmannU_stated", "symbol_KosmannW_stated",
                       "symbol_GaugedSpinor_stated", "a_coercivity_literal"}
    assert rep["parabolicity"]["verdict"] == "fully_forward"
    assert rep["a_coercivity"]["coercive"] == pytest.approx(1.0)


def test_convergence_command(tmp_path):
    code, out = run_cli(tmp_path, {"command": "convergence"})
    assert code == 0
    rep = json.loads((out / "convergence.json").read_text())
    assert abs(rep["time_table"]["order"] - 4) < 0.5


def test_print_schema(capsys):
    assert cli.main(["--print-schema"]) == 0
    assert json.loads(capsys.readouterr().out)["title"] == "spinflow run configuration"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "spinflow", "--print-schema"],
                         capture_output=True, text=True, check=True)
    assert '"additionalProperties": false' in res.stdout
