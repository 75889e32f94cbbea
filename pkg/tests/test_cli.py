"""Configuration parsing and the command-line pipelines."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from aubry.config import ConfigError, RunConfig, load_config
from aubry.cli import main


SMALL_CFG = """[model]
name = pendulum
k = 1.0

[grid]
n = 64
substeps = 16

[phase]
nq = 32
np = 32
p_max = 3.0
flow_substeps = 64

[run]
seed = 0
threads = 1
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.n == 256
    assert cfg.resolved_tol_diag() == pytest.approx(20 / 256 ** 2)


def test_load_small_config(tmp_path):
    cfg = load_config(write_cfg(tmp_path, SMALL_CFG))
    assert cfg.n == 64 and cfg.nq == 32 and cfg.model_name == "pendulum"
    assert cfg.model_params == {"k": 1.0}


def test_unknown_key_is_line_precise_error(tmp_path):
    bad = SMALL_CFG.replace("substeps = 16", "substeps = 16\ntol_diagg = 0.1")
    path = write_cfg(tmp_path, bad)
    with pytest.raises(ConfigError, match=r"run\.cfg:\d+.*tol_diagg"):
        load_config(path)


def test_unknown_section_rejected(tmp_path):
    path = write_cfg(tmp_path, SMALL_CFG + "\n[mystery]\nx = 1\n")
    with pytest.raises(ConfigError, match=r"unknown section"):
        load_config(path)


def test_bad_value_type(tmp_path):
    path = write_cfg(tmp_path, SMALL_CFG.replace("n = 64", "n = sixty"))
    with pytest.raises(ConfigError, match="cannot parse"):
        load_config(path)


def test_bounds_checked(tmp_path):
    path = write_cfg(tmp_path, SMALL_CFG.replace("n = 64", "n = 2048"))
    with pytest.raises(ConfigError, match="bounds"):
        load_config(path)
    path = write_cfg(tmp_path, SMALL_CFG.replace("nq = 32", "nq = 512").replace("np = 32", "np = 512"))
    with pytest.raises(ConfigError, match="65536"):
        load_config(path)


def test_eps_schedule_must_decrease(tmp_path):
    path = write_cfg(tmp_path, SMALL_CFG.replace(
        "[run]", "eps_schedule = 1,2\n\n[run]"))
    with pytest.raises(ConfigError, match="decreasing"):
        load_config(path)


def test_cli_config_error_exit_code(tmp_path):
    path = write_cfg(tmp_path, SMALL_CFG + "\n[mystery]\nx = 1\n")
    assert main(["--config", path, "--command", "alpha"]) == 2


def test_alpha_command_artifacts(tmp_path):
    cfg_path = write_cfg(tmp_path, SMALL_CFG)
    out = str(tmp_path / "out")
    assert main(["--config", cfg_path, "--command", "alpha", "--out", out]) == 0
    data = json.loads((tmp_path / "out" / "alpha.json").read_text())
    assert data["alpha"] == pytest.approx(1.0, abs=0.02)
    assert data["cycle"] == [0]
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(manifest["artifacts"]) == {"alpha.json", "kernel.csv"}
    for entry in manifest["artifacts"].values():
        assert len(entry["sha256"]) == 64


def test_barrier_and_sets_commands(tmp_path):
    cfg_path = write_cfg(tmp_path, SMALL_CFG)
    out = str(tmp_path / "out")
    assert main(["--config", cfg_path, "--command", "aubry", "--out", out]) == 0
    sets = json.loads((tmp_path / "out" / "sets.json").read_text())
    aubry_nodes = [r["node"] for r in sets["nodes"] if r["aubry"]]
    assert 0 in aubry_nodes
    assert all(min(n, 64 - n) <= 2 for n in aubry_nodes)
    assert len(sets["static_classes"]) == 1
    lines = (tmp_path / "out" / "barrier.csv").read_text().splitlines()
    assert lines[0].startswith("# n=64 alpha=1")
    assert len(lines) == 65


def test_free_particle_barrier_csv_zeros(tmp_path):
    cfg = SMALL_CFG.replace("name = pendulum", "name = free_particle")
    cfg = cfg.replace("[grid]\nn = 64", "[grid]\nrefine = true\nn = 64")
    cfg = cfg.replace("k = 1.0\n", "")
    cfg_path = write_cfg(tmp_path, cfg)
    out = str(tmp_path / "out")
    assert main(["--config", cfg_path, "--command", "barrier", "--out", out]) == 0
    rows = [[float(x) for x in line.split(",")]
            for line in (tmp_path / "out" / "barrier.csv").read_text().splitlines()[1:]]
    assert np.abs(np.array(rows)).max() <= 5e-3


def test_phase_sets_command_and_plots(tmp_path):
    cfg_path = write_cfg(tmp_path, SMALL_CFG)
    out = str(tmp_path / "out")
    assert main(["--config", cfg_path, "--command", "phase-sets", "--out", out]) == 0
    rows = (tmp_path / "out" / "phase_sets.csv").read_text().splitlines()
    assert rows[0].startswith("# q,p,aubry")
    assert len(rows) > 2


def test_plot_requires_artifacts(tmp_path):
    from aubry.cli import Pipeline
    cfg = load_config(write_cfg(tmp_path, SMALL_CFG))
    pipe = Pipeline(cfg, str(tmp_path / "out"))
    with pytest.raises(FileNotFoundError, match="barrier.csv"):
        pipe.cmd_plots()


def test_invariant_violation_exit_code(tmp_path, monkeypatch):
    import aubry.cli as cli_mod
    monkeypatch.setattr(cli_mod, "triangle_defect", lambda h: 1.0)
    cfg_path = write_cfg(tmp_path, SMALL_CFG)
    out = str(tmp_path / "out")
    assert main(["--config", cfg_path, "--command", "barrier", "--out", out]) == 4
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "invariant-violation"


def test_unconverged_exit_code(tmp_path):
    cfg = SMALL_CFG + "\n[iteration]\nbarrier_n_min = 1\nbarrier_n_max = 2\n"
    cfg_path = write_cfg(tmp_path, cfg)
    out = str(tmp_path / "out")
    assert main(["--config", cfg_path, "--command", "barrier", "--out", out]) == 3
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "unconverged"


def test_print_config_roundtrips(tmp_path, capsys):
    assert main(["--print-config"]) == 0
    text = capsys.readouterr().out
    cfg = load_config(write_cfg(tmp_path, text))
    assert cfg.n == 256


def test_env_override(tmp_path, monkeypatch):
    cfg_path = write_cfg(tmp_path, SMALL_CFG)
    out = str(tmp_path / "envout")
    monkeypatch.setenv("AUBRY_OUT", out)
    monkeypatch.setenv("AUBRY_COMMAND", "alpha")
    assert main(["--config", cfg_path]) == 0
    assert os.path.exists(os.path.join(out, "alpha.json"))


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "aubry.cli", "--print-config"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "[model]" in proc.stdout
