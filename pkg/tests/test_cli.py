import json

import numpy as np
import pytest

from mrxi import cli
from mrxi.fileio import read_vector_csv
from mrxi.forward import load_operator
from mrxi.signal import load_measurement

SMALL = {
    "grids": {"simulation": [33, 33], "reconstruction": [20, 20]},
    "coils": {"per_side": 3},
    "sensors": {"per_side": 5},
    "phantoms": [{"kind": "tumor"}],
    "methods": [
        {"name": "tikhonov", "alphas": [1e-6], "rho": 1e-4, "max_iter": 40},
        {"name": "tv", "alphas": [1e-6], "rho": 1e-4, "max_iter": 40},
    ],
}


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def test_config_precedence(small, tmp_path, capsys):
    assert cli.main(["config", "--config", str(small), "--coils-per-side", "4", "--no-noise"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["coils"]["per_side"] == 4  # flag beats file
    assert cfg["sensors"]["per_side"] == 5  # file beats default
    assert cfg["noise"]["snr_db"] is None
    assert cfg["domain"]["standoff"] == 0.15


def test_stepwise_commands(small, tmp_path, capsys):
    out = tmp_path / "w"
    base = ["--config", str(small), "--output-dir", str(out)]
    assert cli.main(["layout", *base]) == 0
    lay = json.loads((out / "layout.json").read_text())
    assert len(lay["activations"]) == 12 and len(lay["sensors"]) == 20
    assert cli.main(["assemble", *base]) == 0
    op = load_operator(out / "operator.bin")
    assert op.matrix.shape == (240, 400)
    assert cli.main(["simulate", *base, "--out", str(out / "d.bin")]) == 0
    meas = load_measurement(out / "d.bin")
    assert meas.data.shape == (240,)
    for method in ("tikhonov", "tv", "bregman"):
        rc = cli.main(["reconstruct", "--operator", str(out / "operator.bin"), "--data", str(out / "d.bin"),
                       "--method", method, "--alpha", "1e-6", "--max-iter", "30", "--max-outer", "2",
                       "--out", str(out / f"{method}.csv")])
        assert rc == 0
        assert read_vector_csv(out / f"{method}.csv").size == 400
        assert (out / f"{method}.pgm").exists()
    np.savetxt(out / "t.csv", np.ones(400))
    assert cli.main(["evaluate", "--recon", str(out / "tv.csv"), "--truth", str(out / "t.csv")]) == 0
    assert "ssim" in capsys.readouterr().out


def test_run_and_report(small, tmp_path, capsys):
    out = tmp_path / "r"
    assert cli.main(["run", "--config", str(small), "--output-dir", str(out)]) == 0
    assert (out / "manifest.json").exists()
    capsys.readouterr()
    assert cli.main(["report", str(out), "--out", str(tmp_path / "t.csv")]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "method,tumor"
    assert (tmp_path / "t.csv").read_text() == text


def test_thread_limit_env(small, tmp_path, monkeypatch):
    monkeypatch.setenv("MRXI_THREADS", "1")
    assert cli.main(["layout", "--config", str(small), "--output-dir", str(tmp_path / "l")]) == 0


def test_exit_code_config_error(tmp_path, small):
    # equal grids without the override flag
    rc = cli.main(["layout", "--config", str(small), "--sim-grid", "20", "20", "--output-dir", str(tmp_path)])
    assert rc == cli.EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["layout", "--config", str(bad)]) == cli.EXIT_CONFIG


def test_exit_code_io_error(tmp_path):
    assert cli.main(["layout", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_IO
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"nope")
    rc = cli.main(["reconstruct", "--operator", str(junk), "--data", str(junk), "--alpha", "1",
                   "--out", str(tmp_path / "x.csv")])
    assert rc == cli.EXIT_IO


def test_exit_code_numeric_error(tmp_path):
    cfg = dict(SMALL, phantoms=[{"kind": "tumor", "shapes": [
        {"type": "rect", "cx": 0.5, "cy": 0.5, "hx": 0.1, "hy": 0.1, "value": 0.0}]}])
    path = tmp_path / "zero.json"
    path.write_text(json.dumps(cfg))
    rc = cli.main(["run", "--config", str(path), "--output-dir", str(tmp_path / "z")])
    assert rc == cli.EXIT_NUMERIC
    manifest = json.loads((tmp_path / "z" / "manifest.json").read_text())
    assert manifest["status"] == "failed"
