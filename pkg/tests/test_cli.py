import json
import os
import subprocess
import sys

import numpy as np
import pytest

from nlchns import io
from nlchns.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, fft_workers, main
from nlchns.diagnostics import CSV_COLUMNS, read_csv
from nlchns.errors import ConfigError
from nlchns.fields import Grid, ScalarField

MINIMAL = """grid.nx=16
grid.ny=16
time.dt=2e-3
time.t_end=0.02
time.stride=5
init.phi=cosine_mix
init.phi_amp=0.2
init.u=taylor_green
init.u_amp=0.5
seed=7
"""

LOG = """grid.nx=16
grid.ny=16
potential.family=log
kernel.mass=2.0
time.dt=2e-3
time.t_end=0.01
init.phi=random_smooth
init.phi_bound=0.9
"""


@pytest.fixture
def cfg_file(tmp_path):
    def make(text, name="run.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return make


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


# --------------------------------------------------------------------------
# run


def test_minimal_run(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", cfg_file(MINIMAL), "--out", str(out)]) == EXIT_OK
    data = read_csv((out / "diagnostics.csv").read_text())
    assert len(data["t"]) >= 2 and np.allclose(data["t"], [0.0, 0.01, 0.02])
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["regime"] == "regular-const-nu" and manifest["seed"] == 7
    assert manifest["finished"] is not None
    assert {"coercivity", "a_star", "a_lower", "c0", "grad_J_L1"} <= set(manifest["constants"])
    snaps = sorted(os.listdir(out / "snapshots"))
    assert snaps == ["phi_00000000.snap", "phi_00000005.snap", "phi_00000010.snap",
                     "u_00000000.snap", "u_00000005.snap", "u_00000010.snap"]
    assert (out / "checkpoint" / "checkpoint.txt").exists()
    assert "regular-const-nu" in capsys.readouterr().out


def test_run_is_reproducible(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", cfg_file(MINIMAL), "--out", str(a)])
    main(["run", cfg_file(MINIMAL), "--out", str(b)])
    assert _read(a / "diagnostics.csv") == _read(b / "diagnostics.csv")
    assert _read(a / "snapshots" / "phi_00000010.snap") == _read(b / "snapshots" / "phi_00000010.snap")


def test_rerun_from_written_config(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", cfg_file(MINIMAL), "--out", str(a)])
    main(["run", str(a / "config.txt"), "--out", str(b)])
    assert _read(a / "diagnostics.csv") == _read(b / "diagnostics.csv")
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]


def test_restart_reproduces_full_run(cfg_file, tmp_path):
    full, short, rest = tmp_path / "full", tmp_path / "short", tmp_path / "rest"
    path = cfg_file(MINIMAL)
    assert main(["run", path, "--out", str(full)]) == EXIT_OK
    assert main(["run", path, "--out", str(short), "--set", "time.t_end=0.01"]) == EXIT_OK
    assert main(["run", path, "--out", str(rest), "--restart", str(short / "checkpoint")]) == EXIT_OK
    assert _read(full / "checkpoint" / "phi.snap") == _read(rest / "checkpoint" / "phi.snap")
    assert _read(full / "checkpoint" / "u.snap") == _read(rest / "checkpoint" / "u.snap")


def test_restart_rejects_other_config(cfg_file, tmp_path):
    path = cfg_file(MINIMAL)
    main(["run", path, "--out", str(tmp_path / "a"), "--set", "time.t_end=0.01"])
    code = main(["run", path, "--out", str(tmp_path / "b"), "--set", "seed=8",
                 "--restart", str(tmp_path / "a" / "checkpoint")])
    assert code == EXIT_IO


def test_log_regime_with_pure_phase_mean(cfg_file, tmp_path, capsys):
    code = main(["run", cfg_file(LOG + "init.phi_mean=1.0\n"), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "|phi_mean_0|<1" in capsys.readouterr().err


def test_degenerate_mobility_with_doublewell(cfg_file, tmp_path, capsys):
    code = main(["run", cfg_file(MINIMAL + "mobility.family=degenerate\n"), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "regime matrix" in capsys.readouterr().err


def test_coercivity_failure_names_assumption(cfg_file, tmp_path, capsys):
    code = main(["run", cfg_file(LOG.replace("kernel.mass=2.0", "kernel.mass=0.5")), "--out", str(tmp_path / "o")])
    assert code == EXIT_CONFIG
    assert "A4 coercivity: min(F''+a)" in capsys.readouterr().err


def test_unknown_key_is_config_error(cfg_file, tmp_path):
    assert main(["run", cfg_file("grid.nz=3\n"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "o")]) == EXIT_IO


def test_numerical_failure_exit_code(cfg_file, tmp_path):
    text = MINIMAL.replace("init.u_amp=0.5", "init.u_amp=50") + "time.dt_min=1e-3\n"
    assert main(["run", cfg_file(text), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC


# --------------------------------------------------------------------------
# twin


def test_twin_zero_eps(cfg_file, tmp_path):
    out = tmp_path / "t"
    assert main(["twin", cfg_file(MINIMAL), "--out", str(out), "--eps", "0"]) == EXIT_OK
    rep = json.loads((out / "twin.json").read_text())
    assert all(d == 0.0 for d in rep["twin"]["d"])
    assert "collapse" not in rep


def test_twin_collapse_section(cfg_file, tmp_path):
    out = tmp_path / "t"
    code = main(["twin", cfg_file(MINIMAL), "--out", str(out), "--eps", "1e-6", "--mode", "phase-meanzero"])
    assert code == EXIT_OK
    rep = json.loads((out / "twin.json").read_text())
    coll = rep["collapse"]
    assert coll["eps"] == pytest.approx([1e-4, 1e-6, 1e-8], rel=1e-12)
    assert len(coll["scaled"]) == 3 and coll["passed"] is True
    assert rep["twin"]["metric"] == "d_weak" and rep["twin"]["envelope_pass"] is True


def test_twin_mean_shift(cfg_file, tmp_path):
    out = tmp_path / "t"
    assert main(["twin", cfg_file(MINIMAL), "--out", str(out), "--mean-shift", "1e-3"]) == EXIT_OK
    rep = json.loads((out / "twin.json").read_text())["twin"]
    assert rep["kind"] == "mean_shift"
    assert all(g > 0 for g in rep["mean_gap"])


# --------------------------------------------------------------------------
# audit


def test_audit_round_trip(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    path = cfg_file(MINIMAL)
    main(["run", path, "--out", str(out)])
    capsys.readouterr()
    code = main(["audit", "--config", path, "--phi", str(out / "snapshots" / "phi_00000010.snap"),
                 "--u", str(out / "snapshots" / "u_00000010.snap")])
    assert code == EXIT_OK
    assert "audit: all invariants hold" in capsys.readouterr().out
    assert main(["audit", "--config", path, "--checkpoint", str(out / "checkpoint")]) == EXIT_OK


def test_audit_truncated_snapshot(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    path = cfg_file(MINIMAL)
    main(["run", path, "--out", str(out)])
    snap = out / "snapshots" / "phi_00000005.snap"
    snap.write_bytes(_read(snap)[:-8])
    assert main(["audit", "--config", path, "--phi", str(snap)]) == EXIT_IO
    assert "byte offset" in capsys.readouterr().err


def test_audit_flags_phase_outside_barrier(cfg_file, tmp_path, capsys):
    g = Grid(16, 16)
    phi = np.zeros(g.shape)
    phi[3, 4] = 1.5
    snap = tmp_path / "bad.snap"
    io.write_snapshot(snap, ScalarField(g, phi))
    code = main(["audit", "--config", cfg_file(LOG), "--phi", str(snap)])
    assert code == EXIT_NUMERIC
    text = capsys.readouterr().out
    assert "invariant failure" in text and "VIOLATED" in text


# --------------------------------------------------------------------------
# opscheck


def test_opscheck_passes_and_is_deterministic(capsys):
    assert main(["opscheck"]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["opscheck"]) == EXIT_OK
    assert capsys.readouterr().out == first
    assert first.count("PASS") == 6 and "FAIL" not in first


def test_opscheck_detects_broken_stencil(capsys):
    assert main(["opscheck", "--inject-fault", "stencil"]) == EXIT_NUMERIC
    out = capsys.readouterr().out
    assert "adjointness" in out and "FAIL" in out and "oracle mismatch" in out


# --------------------------------------------------------------------------
# longtime, refine


def test_longtime_short_horizon_rejected(cfg_file, tmp_path):
    assert main(["longtime", cfg_file(MINIMAL), "--out", str(tmp_path / "l"), "--t-end", "1"]) == EXIT_NUMERIC


def test_longtime_small(cfg_file, tmp_path):
    text = MINIMAL.replace("time.dt=2e-3", "time.dt=0.05")
    out = tmp_path / "l"
    code = main(["longtime", cfg_file(text), "--out", str(out), "--t-end", "4", "--min-t-end", "4",
                 "--stride", "4"])
    assert code == EXIT_OK
    rep = json.loads((out / "longtime.json").read_text())["longtime"]
    assert rep["ok"] is True and rep["t_star"] >= 0
    assert read_csv((out / "diagnostics.csv").read_text())["t"][-1] == pytest.approx(4.0)


def test_refine_time(cfg_file, tmp_path, capsys):
    out = tmp_path / "r"
    code = main(["refine", cfg_file(MINIMAL), "--out", str(out), "--kind", "time",
                 "--levels", "4e-3,2e-3,1e-3", "--t-end", "0.02"])
    assert code == EXIT_OK
    table = json.loads((out / "refine.json").read_text())["refinement"]
    assert table["kind"] == "time" and len(table["diff_phi"]) == 2
    assert "order=" in capsys.readouterr().out


def test_refine_bad_ladder(cfg_file, tmp_path):
    code = main(["refine", cfg_file(MINIMAL), "--out", str(tmp_path / "r"), "--levels", "16,32"])
    assert code == EXIT_CONFIG


# --------------------------------------------------------------------------
# environment and console script


def test_thread_variable():
    assert fft_workers({}) == 1
    assert fft_workers({"NLCHNS_THREADS": "0"}) == 1
    assert fft_workers({"NLCHNS_THREADS": "4"}) == 4
    with pytest.raises(ConfigError):
        fft_workers({"NLCHNS_THREADS": "many"})


def test_threads_do_not_change_results(cfg_file, tmp_path, monkeypatch):
    path = cfg_file(MINIMAL)
    main(["run", path, "--out", str(tmp_path / "a")])
    monkeypatch.setenv("NLCHNS_THREADS", "2")
    main(["run", path, "--out", str(tmp_path / "b")])
    a = read_csv((tmp_path / "a" / "diagnostics.csv").read_text())
    b = read_csv((tmp_path / "b" / "diagnostics.csv").read_text())
    assert np.allclose(a["E_total"], b["E_total"], rtol=1e-12, atol=0)


def test_bad_thread_variable_is_config_error(cfg_file, tmp_path, monkeypatch):
    monkeypatch.setenv("NLCHNS_THREADS", "x")
    assert main(["run", cfg_file(MINIMAL), "--out", str(tmp_path / "a")]) == EXIT_CONFIG


def test_console_script_runs_as_module(tmp_path):
    res = subprocess.run([sys.executable, "-m", "nlchns", "opscheck", "--cases", "2"],
                         capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0, res.stderr
    assert "opscheck: all oracles agree" in res.stdout


def test_csv_header_contract(cfg_file, tmp_path):
    main(["run", cfg_file(MINIMAL), "--out", str(tmp_path / "o")])
    first = (tmp_path / "o" / "diagnostics.csv").read_text().split("\n", 1)[0]
    assert first == ",".join(CSV_COLUMNS) == "t,E_total,E_kin,E_int,E_bulk,mass,maxphi,diss_visc,diss_chem,work,residual"
