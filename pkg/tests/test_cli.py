from __future__ import annotations

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cdeo_lab.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, run
from cdeo_lab.io import config_hash, read_csv

K = math.log(100.0)
TINY_GRIDS = {"support": {"L": 3.0, "n": 30},
              "constraint": {"seed_theta": 6, "seed_x": 15, "scan_theta": 16, "scan_x": 60, "max_rounds": 30}}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def outputs(capsys):
    return [line for line in capsys.readouterr().out.splitlines() if line.strip()]


def put_cfg(**extra):
    cfg = {"market": {"r": 0.06, "sigma": 0.4, "T": 0.5, "x0": K + 0.1},
           "payoff": {"kind": "put", "log_strike": K}, "grids": dict(TINY_GRIDS),
           "tolerances": {"lp_tol": 1e-9, "slack_tol": 1e-4}}
    cfg.update(extra)
    return cfg


# ---------------------------------------------------------------- exit codes

def test_unknown_command(tmp_path):
    assert run(["frobnicate", "--config", write(tmp_path, put_cfg())]) == EXIT_USAGE


def test_no_arguments():
    assert run([]) == EXIT_USAGE


def test_reproduce_needs_figure(tmp_path):
    assert run(["reproduce", "--config", write(tmp_path, put_cfg()), "--out", str(tmp_path)]) == EXIT_USAGE


@pytest.mark.parametrize("cfg, field", [
    ({}, "market"),
    ({"market": {"r": -0.1, "sigma": 0.4, "T": 1.0}}, "market/r"),
    ({"market": {"r": 0.1, "sigma": 0.0, "T": 1.0}}, "market/sigma"),
    ({"market": {"r": 0.1, "sigma": 0.4, "T": 1.0}, "colour": "blue"}, "<root>"),
    ({"market": {"r": 0.1, "sigma": 0.4, "T": 1.0}, "payoff": {"kind": "put"}}, "payoff/log_strike"),
])
def test_invalid_config_names_field(tmp_path, capsys, cfg, field):
    assert run(["cdeo", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert f"'{field}'" in capsys.readouterr().err


def test_missing_section_for_command(tmp_path, capsys):
    cfg = {"market": {"r": 0.1, "sigma": 0.4, "T": 1.0}}
    assert run(["price-euro", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "'european'" in capsys.readouterr().err


def test_bad_json_and_missing_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert run(["eao", "--config", str(p)]) == EXIT_CONFIG
    assert run(["eao", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_coarse_grid_is_a_config_error(tmp_path, capsys):
    cfg = put_cfg(grids={**TINY_GRIDS, "support": {"L": 8.0, "n": 30}})
    assert run(["cdeo", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "too coarse" in capsys.readouterr().err


def test_round_cap_exit_code(tmp_path):
    cfg = put_cfg(grids={**TINY_GRIDS, "constraint": {**TINY_GRIDS["constraint"], "max_rounds": 1}})
    assert run(["cdeo", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_NOT_CONVERGED


# ---------------------------------------------------------------- runs

def test_eao_exp_pair(tmp_path, capsys):
    cfg = {"market": {"r": 0.0, "sigma": math.sqrt(2.0), "T": 5.0, "x0": 0.0},
           "european": {"kind": "expression", "expression": "3*exp(x/2) + exp(3*x/2)"},
           "grids": {"x": {"values": [-1.5, -0.6, 0.4]}}, "options": {"theta_samples": 200}}
    assert run(["eao", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    files = outputs(capsys)
    csv = [f for f in files if f.endswith("_eao.csv")][0]
    cols, rows, meta = read_csv(csv)
    x = np.array([float(r[0]) for r in rows])
    am = np.array([float(r[1]) for r in rows])
    ref = np.where(x < 0, 4 * np.exp(0.75 * x), 3 * np.exp(x / 2) + np.exp(1.5 * x))
    assert np.max(np.abs(am - ref)) <= 1e-6
    assert meta["config_hash"] == config_hash(cfg)


def test_price_euro_indicator(tmp_path, capsys):
    cfg = {"market": {"r": 1.0, "sigma": math.sqrt(2.0), "T": 1.0},
           "european": {"kind": "indicator", "lo": 0.0, "hi": 1.0},
           "grids": {"theta": {"values": [0.0, 1.0]}, "x": {"values": [-1.0, 0.5]}}}
    assert run(["price-euro", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    _, rows, _ = read_csv(outputs(capsys)[0])
    vals = {(float(t), float(x)): float(v) for t, x, v in rows}
    assert vals[(0.0, 0.5)] == 1.0 and vals[(0.0, -1.0)] == 0.0
    assert 0 < vals[(1.0, 0.5)] < 1


def test_cdeo_zero_payoff(tmp_path, capsys):
    cfg = put_cfg(payoff={"kind": "zero", "log_strike": K})
    assert run(["cdeo", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    summary = [f for f in outputs(capsys) if f.endswith("_summary.json")][0]
    data = json.loads(open(summary).read())
    assert data["price"] == 0.0 and data["converged"]


def test_cdeo_deterministic_with_headers(tmp_path, capsys):
    cfg = put_cfg()
    path = write(tmp_path, cfg)
    assert run(["cdeo", "--config", path, "--out", str(tmp_path / "a")]) == EXIT_OK
    first = outputs(capsys)
    assert run(["cdeo", "--config", path, "--out", str(tmp_path / "b")]) == EXIT_OK
    second = outputs(capsys)
    assert len(first) == len(second) >= 4
    h = config_hash(cfg)
    for a, b in zip(first, second):
        assert open(a, "rb").read() == open(b, "rb").read(), a
        assert h[:12] in a
    cols, rows, meta = read_csv([f for f in first if f.endswith("_mu_star.csv")][0])
    assert cols == ["y", "mass"] and len(rows) == 30
    assert meta["config_hash"] == h and "lp_tol" in str(meta["tolerances"])


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cdeo_lab", "frobnicate", "--config", "x"],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_USAGE and "unknown command" in r.stderr


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.json")),
                         ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    from cdeo_lab.cli import load_config
    load_config(path)
