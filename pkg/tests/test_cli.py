import csv
import json
import os
import subprocess
import sys

import pytest
import yaml

from aclab.cli import EXIT_GATED, EXIT_INVALID, EXIT_OK, main
from aclab.config import ExperimentConfig, load_config


def _write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


SIM = {
    "kind": "simulate", "seed": 3,
    "spatial": {"grid": 16},
    "integrator": {"dt": 1e-3, "T": 0.02, "nu": 1.0, "record_every": 5},
    "initial": {"coeffs": [0.4]},
    "observables": [{"kind": "cosine", "w": [1.0]}, {"kind": "gauss-radial"}],
    "ntraj": 4,
}


def test_zero_noise_zero_data(tmp_path):
    cfg = dict(SIM, noise={"scale": 0.0}, initial={},
               observables=[{"kind": "coordinate", "w": [1.0]}])
    p = _write(tmp_path, "c.yaml", cfg)
    assert main(["run", str(p), "--output-dir", str(tmp_path / "out")]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "out" / "timeseries.csv")))
    assert rows and all(float(r["mean_coordinate"]) == 0.0 for r in rows)
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert man["config"]["noise"]["scale"] == 0.0
    for key in ("C_B", "C_B_prime", "K0", "alpha0", "bar_alpha"):
        assert key in man["derived_constants"]
    assert "wall_clock_seconds" in man and "version" in man and len(man["config_hash"]) == 64


def test_mixing_gated_under_neumann(tmp_path, capsys):
    p = _write(tmp_path, "m.yaml", {
        "kind": "mixing", "spatial": {"bc": "neumann", "grid": 16},
        "integrator": {"dt": 1e-3, "T": 3, "nu": 1}, "mixing": {"initial_y": {"coeffs": [0.3]}},
    })
    assert main(["run", str(p), "--output-dir", str(tmp_path / "o")]) == EXIT_GATED
    err = capsys.readouterr().err
    assert "alpha0" in err and "nu(1/K0^2 - 1) - C_B/2 - K" in err
    assert not (tmp_path / "o").exists()


def test_validate_missing_nu(tmp_path, capsys):
    cfg = dict(SIM, integrator={"dt": 1e-3, "T": 0.02})
    p = _write(tmp_path, "v.yaml", cfg)
    assert main(["validate", str(p)]) == EXIT_INVALID
    assert "integrator.nu" in capsys.readouterr().err


def test_validate_alpha_below_threshold(tmp_path, capsys):
    p = _write(tmp_path, "k.yaml", {
        "kind": "kolmogorov-residual", "noise": {"num_modes": 4},
        "integrator": {"dt": 1e-3, "T": 0.1, "nu": 1},
        "kolmogorov": {"alpha": 12.5, "observable": {"kind": "cosine"}, "smoothing": {"lam": 0.5},
                       "points": [{}]},
    })
    assert main(["validate", str(p)]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "alpha = 12.5" in err and "bar_alpha = 79.29" in err


def test_validate_valid(tmp_path, capsys):
    p = _write(tmp_path, "ok.yaml", SIM)
    assert main(["validate", str(p)]) == EXIT_OK
    out = capsys.readouterr()
    assert out.out == "" and out.err == ""


def test_unknown_keys_rejected(tmp_path, capsys):
    p = _write(tmp_path, "x.yaml", dict(SIM, integrator=dict(SIM["integrator"], dtt=1)))
    assert main(["validate", str(p)]) == EXIT_INVALID
    assert "integrator.dtt" in capsys.readouterr().err


def test_determinism_and_manifest_closure(tmp_path):
    p = _write(tmp_path, "s.yaml", SIM)
    a, b, c = (tmp_path / n for n in "abc")
    assert main(["run", str(p), "--output-dir", str(a)]) == EXIT_OK
    assert main(["run", str(p), "--output-dir", str(b)]) == EXIT_OK
    assert (a / "timeseries.csv").read_bytes() == (b / "timeseries.csv").read_bytes()
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert main(["run", str(a / "manifest.json"), "--output-dir", str(c)]) == EXIT_OK
    assert (a / "timeseries.csv").read_bytes() == (c / "timeseries.csv").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mc = json.loads((c / "manifest.json").read_text())
    assert ma["config_hash"] == mc["config_hash"]


def test_seed_override_changes_output(tmp_path):
    p = _write(tmp_path, "s.yaml", SIM)
    main(["run", str(p), "--output-dir", str(tmp_path / "a")])
    main(["run", str(p), "--output-dir", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "timeseries.csv").read_bytes() != (tmp_path / "b" / "timeseries.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]["seed"] == 4


def test_env_output_dir(tmp_path, monkeypatch):
    p = _write(tmp_path, "s.yaml", SIM)
    monkeypatch.setenv("ACLAB_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.chdir(tmp_path)
    assert main(["run", str(p)]) == EXIT_OK
    assert (tmp_path / "env" / "manifest.json").exists()
    assert sorted(os.listdir(tmp_path)) == ["env", "s.yaml"]


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "aclab.cli", "list-observables"], capture_output=True, text=True)
    assert r.returncode == 0 and "gauss-radial" in r.stdout
    r = subprocess.run([sys.executable, "-m", "aclab.cli", "print-constants"], capture_output=True, text=True)
    consts = json.loads(r.stdout)
    assert consts["K0"] == pytest.approx(0.3033144, rel=1e-6)


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig.model_validate(SIM)
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"config": cfg.canonical(), "config_hash": cfg.digest()}))
    assert load_config(p).digest() == cfg.digest()
    with pytest.raises(ValueError):
        ExperimentConfig.model_validate({"kind": "couple", "integrator": {"dt": 0.1, "T": 1, "nu": 1}})
