import json
import subprocess
import sys

import numpy as np
import pytest

from ks_insense.cli import main, parse_sweep, worker_count
from ks_insense.config import ExperimentConfig
from ks_insense.errors import ConfigError
from ks_insense.io import read_csv, read_json
from ks_insense.solvers import solve_cascade

SMALL = {"grid": {"N": 16, "M": 32}, "carleman": {"s": 1e-6}}
BUMP = {**SMALL, "sources": {"kind": "gaussian-bump"}}


def write_config(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def run(tmp_path, cmd, data, *extra, name="out"):
    conf = write_config(tmp_path / f"{name}.json", data)
    out = tmp_path / name
    return main([cmd, "--config", conf, "--out", str(out), *extra]), out


def test_simulate_zero_fields(tmp_path):
    code, out = run(tmp_path, "simulate", SMALL)
    assert code == 0
    cols = read_csv(out / "fields.csv")
    assert set(cols) == {"t", "x", "y", "z"} and len(cols["y"]) == 33 * 15
    assert not cols["y"].any() and not cols["z"].any()
    man = read_json(out / "manifest.json")
    assert man["command"] == "simulate" and "fields.csv" in man["outputs"]


def test_simulate_cascade_bit_equal(tmp_path):
    code, out = run(tmp_path, "simulate", BUMP, "--cascade")
    assert code == 0
    cfg = ExperimentConfig.from_dict(BUMP)
    cs = solve_cascade(cfg.system(), None, None, None, None, *cfg.sources())
    cols = read_csv(out / "fields.csv")
    for name in ("y", "z", "p", "q"):
        assert np.array_equal(cols[name].reshape(33, 15), getattr(cs, name))


def test_control_zero_sources(tmp_path):
    code, out = run(tmp_path, "control", SMALL)
    assert code == 0
    cols = read_csv(out / "controls.csv")
    assert not cols["h1"].any() and not cols["h2"].any()
    assert read_json(out / "hum.json")["converged"] is True


def test_control_sweep_layout_and_determinism(tmp_path):
    code, out = run(tmp_path, "control", BUMP, "--sweep", "epsilon=1e-2,1e-6", "--sweep", "alpha=0,1")
    assert code == 0
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert dirs == ["epsilon_0.01__alpha_0", "epsilon_0.01__alpha_1", "epsilon_1e-06__alpha_0",
                    "epsilon_1e-06__alpha_1"]
    r2 = read_json(out / "epsilon_0.01__alpha_0" / "hum.json")
    r6 = read_json(out / "epsilon_1e-06__alpha_0" / "hum.json")
    assert r6["residual_norm"] <= r2["residual_norm"]
    code, out2 = run(tmp_path, "control", BUMP, "--sweep", "epsilon=1e-2,1e-6", "--sweep", "alpha=0,1",
                     name="again")
    for p in out.rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (out2 / p.relative_to(out)).read_bytes(), p


def test_threads_do_not_change_output(tmp_path, monkeypatch):
    _, out1 = run(tmp_path, "control", BUMP, "--sweep", "epsilon=1e-3,1e-5", name="serial")
    monkeypatch.setenv("KS_INSENSE_THREADS", "3")
    _, out3 = run(tmp_path, "control", BUMP, "--sweep", "epsilon=1e-3,1e-5", name="threaded")
    for p in out1.rglob("*.csv"):
        assert p.read_bytes() == (out3 / p.relative_to(out1)).read_bytes()


def test_worker_count(monkeypatch):
    monkeypatch.delenv("KS_INSENSE_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("KS_INSENSE_THREADS", "4")
    assert worker_count() == 4
    for bad in ("0", "x"):
        monkeypatch.setenv("KS_INSENSE_THREADS", bad)
        with pytest.raises(ConfigError):
            worker_count()


def test_bad_threads_exit_code(tmp_path, monkeypatch):
    monkeypatch.setenv("KS_INSENSE_THREADS", "-2")
    code, _ = run(tmp_path, "control", SMALL)
    assert code == 1


def test_parse_sweep():
    assert parse_sweep(["epsilon=1e-2,1e-4"]) == {"epsilon": [1e-2, 1e-4]}
    for bad in (["gamma=1"], ["epsilon"], ["epsilon=a"], ["alpha="]):
        with pytest.raises(ConfigError):
            parse_sweep(bad)


def test_verify_roundtrip(tmp_path):
    code, ctrl = run(tmp_path, "control", BUMP, name="ctrl")
    assert code == 0
    code, out = run(tmp_path, "verify", BUMP, "--controls", str(ctrl), name="ver")
    assert code == 0
    rep = read_json(out / "insensitivity.json")
    assert rep["cauchy_schwarz_ok"] is True and rep["schema_version"]
    assert rep["residual_norm"] == pytest.approx(read_json(ctrl / "hum.json")["residual_norm"], rel=1e-9)
    cols = read_csv(out / "insensitivity.csv")
    assert len(cols["fd"]) == 10


def test_verify_end_to_end_and_seed(tmp_path):
    code, out = run(tmp_path, "verify", BUMP, "--seed", "7")
    assert code == 0
    rep = read_json(out / "insensitivity.json")
    assert rep["max_abs_derivative"] <= 2 * rep["residual_norm"]
    assert read_json(out / "manifest.json")["config"]["sentinel"]["rng_seed"] == 7


def test_verify_missing_controls(tmp_path):
    code, _ = run(tmp_path, "verify", SMALL, "--controls", str(tmp_path / "nowhere"))
    assert code == 1


def test_audit_outputs(tmp_path):
    data = {**BUMP, "audit": {"observability": True, "mu_list": [1e-2, 1e-6], "n_draws": 2}}
    code, out = run(tmp_path, "audit", data)
    assert code == 0
    summary = read_json(out / "audit.json")
    assert summary["k_auto"] is True and summary["k_min"] > summary["k_threshold"]
    assert all(g["holds"] for g in summary["good_sign"])
    assert [g["p"] for g in summary["good_sign"]] == [2, 10]
    assert summary["admissibility"]["admissible"] is True
    car = read_csv(out / "carleman.csv")
    assert len(car["ratio"]) == 2 * 3 and np.all(np.isfinite(car["log_ratio"]))
    obs = read_csv(out / "observability.csv")
    assert list(obs["mu"]) == [1e-6, 1e-2] and obs["c_obs"][0] >= obs["c_obs"][1]
    assert len(read_csv(out / "weight_estimates.csv")["b"]) == 3


def test_config_error_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "simulate", {"sets": {"omega": [0.1, 0.2], "O": [0.5, 0.8]}})
    assert code == 1
    assert "intersect" in capsys.readouterr().err


def test_stalled_exit_code(tmp_path):
    data = {**BUMP, "hum": {"cg_max_iter": 1, "cg_tol": 1e-12}}
    code, out = run(tmp_path, "control", data)
    assert code == 2
    assert read_json(out / "hum.json")["converged"] is False


def test_degenerate_exit_code(tmp_path):
    data = {"grid": {"N": 16, "M": 16}, "sets": {"omega": [0.5, 0.51], "O": [0.5, 0.51]},
            "carleman": {"s": 1e-6}, "audit": {"weights": False}}
    code, _ = run(tmp_path, "audit", data)
    assert code == 3


def test_console_script(tmp_path):
    conf = write_config(tmp_path / "c.json", SMALL)
    proc = subprocess.run([sys.executable, "-m", "ks_insense.cli", "simulate", "--config", conf, "--out",
                           str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "fields.csv").exists()


def test_inadmissible_sources_warn(tmp_path, caplog):
    data = {"grid": {"N": 16, "M": 32}, "sources": {"kind": "gaussian-bump", "params": {"t_min": 0.0}}}
    with caplog.at_level("WARNING", logger="ks_insense"):
        code, _ = run(tmp_path, "control", data)
    assert code == 0
    assert "admissibility" in caplog.text
