import json

import numpy as np
import pytest

from scalarforge import spectral_core as sc
from scalarforge.cli import main
from scalarforge.config import load_config
from scalarforge.errors import ConfigError


def test_bundled_config():
    cfg = load_config("ipm-demo")
    assert cfg.symbol == "ipm2d" and cfg.n == 512 and cfg.Z == 4


@pytest.mark.parametrize("bad", [{"bogus": 1}, {"step": {"nope": 2}}, {"n": 100}, {"alpha": 0.2},
                                 {"seed_field": {"kind": "expression"}},
                                 {"symbol": {"name": "custom", "m1": "xi1"}}])
def test_config_rejection(bad):
    with pytest.raises(ConfigError):
        load_config(bad)


def test_cli_bad_config(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n": 64, "bogus": 1}))
    assert main(["run", "--config", str(p)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config_error"


def test_cli_sqg_step_refuses(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"symbol": "sqg", "n": 64}))
    assert main(["step", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "odd_multiplier"


def test_cli_diagnose(tmp_path):
    X = sc.grid(16).X
    files = []
    for j in range(3):
        f = tmp_path / f"s{j}.sfld"
        sc.write_sfld(f, np.cos(X[0]))
        files.append(str(f))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"symbol": "sqg"}))
    assert main(["diagnose", *files, "--config", str(cfg), "--out", str(tmp_path / "o"), "--dt", "0.1"]) == 0
    rep = json.loads((tmp_path / "o" / "diagnose.json").read_text())
    assert rep["hamiltonian"][0] == pytest.approx(2 * np.pi ** 2)
    assert rep["defect"]["defect"] < 1e-13


def test_cli_smooth_run(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"symbol": "sqg", "smooth": {"n": 32, "dt": 0.01, "t_end": 0.1,
                                                           "save_every": 5}}))
    assert main(["smooth-run", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "smooth.json").read_text())
    assert rep["hamiltonian_drift"] < 1e-6
    assert (tmp_path / "series.csv").exists()


def test_cli_glue(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"glue": {"n": 16, "dt": 0.01, "scan_points": 33}}))
    assert main(["glue", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "glue.json").read_text())["support_ok"]
