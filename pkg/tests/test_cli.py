"""Command-line behavior: file outputs, exit codes, determinism."""

import json
import os
import signal
import socket
import subprocess
import sys
import time
import urllib.request

import numpy as np
import pytest

from scatterfit.cli import main
from scatterfit.modelfile import Workspace

SPHERE = {
    "name": "sphere",
    "parameters": {
        "R": {"value": 7.5, "bounds": [1.0, 20.0], "units": "nm"},
        "scale": {"value": 4.5e5},
        "bg": {"value": 1.0, "fixed": True},
    },
    "variables": ["q"],
    "functors": {
        "I": {"kind": "expr",
              "text": "scale * (3*(sin(q*R) - q*R*cos(q*R))/(q*R)^3)^2"
                      " + bg"},
    },
}

LINE = {
    "parameters": {
        "a": {"value": 1.0, "bounds": [-10.0, 10.0]},
        "b": {"value": 0.0, "bounds": [-10.0, 10.0]},
    },
    "variables": ["x"],
    "functors": {"f": {"kind": "expr", "text": "a*x + b"}},
}


def _write(tmp_path, doc, name="model.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=1))
    return str(path)


def _read_csv(path):
    rows = np.loadtxt(path, delimiter=",", comments="#")
    with open(path) as fh:
        header = fh.readline()
    return header, np.atleast_2d(rows)


def test_simulate_writes_grid_csv(tmp_path):
    model = _write(tmp_path, SPHERE)
    out = str(tmp_path / "curve.csv")
    assert main(["simulate", model, "--grid", "q=0.001:4:0.001",
                 "--out", out]) == 0
    header, rows = _read_csv(out)
    assert header.strip() == "# q,value"
    assert rows.shape == (3999, 2)
    ws = Workspace(SPHERE)
    expected = ws.functors["I"](rows[:, 0])
    assert np.allclose(rows[:, 1], expected, rtol=1e-8)


def test_simulate_full_paper_grid_has_4000_rows(tmp_path):
    model = _write(tmp_path, SPHERE)
    out = str(tmp_path / "curve.csv")
    assert main(["simulate", model, "--grid", "0:4:0.001",
                 "--out", out]) == 0
    with open(out) as fh:
        lines = [l for l in fh if not l.startswith("#")]
    assert len(lines) == 4000
    # the q = 0 row exists and carries the 0/0 indeterminate form
    assert lines[0].split(",")[1].strip() == "nan"


def test_simulate_multiple_functors_suffixes_files(tmp_path):
    doc = json.loads(json.dumps(SPHERE))
    doc["functors"]["I2"] = {"kind": "expr", "text": "2 * I"}
    model = _write(tmp_path, doc)
    out = str(tmp_path / "out.csv")
    assert main(["simulate", model, "--grid", "q=0.01:1:0.01",
                 "--out", out]) == 0
    first = tmp_path / "out_I.csv"
    second = tmp_path / "out_I2.csv"
    assert first.exists() and second.exists()
    assert not (tmp_path / "out.csv").exists()
    _, a = _read_csv(str(first))
    _, b = _read_csv(str(second))
    assert np.allclose(b[:, 1], 2 * a[:, 1], rtol=1e-8)


def test_simulate_no_functors_is_schema_error(tmp_path, capsys):
    model = _write(tmp_path, {"parameters": {}, "variables": ["q"]})
    assert main(["simulate", model, "--grid", "q=0:1:0.1",
                 "--out", str(tmp_path / "x.csv")]) == 1
    assert "no functors" in capsys.readouterr().err


def test_simulate_bad_grid_is_evaluation_fault(tmp_path, capsys):
    model = _write(tmp_path, SPHERE)
    assert main(["simulate", model, "--grid", "q=1:0:0.1",
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["simulate", model, "--grid", "w=0:1:0.1",
                 "--out", str(tmp_path / "x.csv")]) == 2
    err = capsys.readouterr().err
    assert "q" in err or "w" in err


def test_schema_error_names_field(tmp_path, capsys):
    doc = json.loads(json.dumps(SPHERE))
    doc["functors"]["I"]["text"] = "scale * nonsense(q)"
    model = _write(tmp_path, doc)
    assert main(["simulate", model, "--grid", "q=0:1:0.1",
                 "--out", str(tmp_path / "x.csv")]) == 1
    assert "functors.I" in capsys.readouterr().err


def test_simulate_png(tmp_path):
    model = _write(tmp_path, SPHERE)
    out = str(tmp_path / "curve.png")
    assert main(["simulate", model, "--grid", "q=0.01:2:0.01",
                 "--out", out, "--format", "png"]) == 0
    with open(out, "rb") as fh:
        assert fh.read(8).startswith(b"\x89PNG")


def test_simulate_from_coords_file(tmp_path):
    coords = tmp_path / "points.dat"
    qs = np.linspace(0.05, 1.0, 37)
    coords.write_text("\n".join("%.12g 0" % q for q in qs) + "\n")
    model = _write(tmp_path, SPHERE)
    out = str(tmp_path / "curve.csv")
    assert main(["simulate", model, "--coords", str(coords),
                 "--out", out]) == 0
    _, rows = _read_csv(out)
    assert rows.shape == (37, 2)
    assert np.allclose(rows[:, 0], qs, rtol=1e-6)


def _fit_setup(tmp_path, start_value=7.125, optimizer="lm", options=None):
    model = _write(tmp_path, SPHERE, "truth.json")
    sim = str(tmp_path / "sim.csv")
    assert main(["simulate", model, "--grid", "q=0.005:2:0.005",
                 "--out", sim]) == 0
    doc = json.loads(json.dumps(SPHERE))
    doc["parameters"]["R"]["value"] = start_value
    doc["parameters"]["scale"]["fixed"] = True
    doc["datasets"] = {"sim": {"file": "sim.csv"}}
    doc["models"] = {"m": {"functor": "I", "dataset": "sim"}}
    doc["fit"] = {"optimizer": optimizer}
    if options:
        doc["fit"]["options"] = options
    return _write(tmp_path, doc, "fitme.json")


def test_fit_round_trip_recovers_radius(tmp_path, capsys):
    fit_file = _fit_setup(tmp_path)  # R starts 5% off
    out = str(tmp_path / "results.json")
    before = open(fit_file).read()
    assert main(["fit", fit_file, "--out", out]) == 0
    assert open(fit_file).read() == before  # input never mutated
    report = json.load(open(out))
    assert report["status"] == "converged"
    assert report["chi2"] < 1e-10
    radius = {r["name"]: r for r in report["parameters"]}["R"]
    assert radius["raw_value"] == pytest.approx(7.5, rel=1e-4)
    assert radius["error"] is not None
    printed = capsys.readouterr().out
    assert "chi2" in printed and "converged" in printed
    history = report["chi2_history"]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(history, history[1:]))


def test_fit_de_requires_bounds(tmp_path, capsys):
    fit_file = _fit_setup(tmp_path)
    doc = json.load(open(fit_file))
    doc["parameters"]["R"].pop("bounds")
    path = _write(tmp_path, doc, "nobounds.json")
    assert main(["fit", path, "--optimizer", "de"]) == 1
    assert "R" in capsys.readouterr().err


def test_fit_de_seed_determinism(tmp_path):
    model = _write(tmp_path, LINE, "line_truth.json")
    sim = str(tmp_path / "line.csv")
    assert main(["simulate", model, "--grid", "x=0:5:0.25",
                 "--out", sim]) == 0
    doc = json.loads(json.dumps(LINE))
    doc["parameters"]["a"]["value"] = 3.0
    doc["parameters"]["b"]["value"] = -2.0
    doc["datasets"] = {"d": {"file": "line.csv"}}
    doc["models"] = {"m": {"functor": "f", "dataset": "d"}}
    doc["fit"] = {"optimizer": "de",
                  "options": {"population_size": 12,
                              "max_generations": 60,
                              "final_polish_iters": 20}}
    fit_file = _write(tmp_path, doc, "line_fit.json")
    out_a = str(tmp_path / "a.json")
    out_b = str(tmp_path / "b.json")
    assert main(["fit", fit_file, "--seed", "7", "--out", out_a]) == 0
    assert main(["fit", fit_file, "--seed", "7", "--out", out_b]) == 0
    rep_a = json.load(open(out_a))
    rep_b = json.load(open(out_b))
    rep_a.pop("saved_at")
    rep_b.pop("saved_at")
    assert rep_a == rep_b
    assert rep_a["seed"] == 7
    values = {r["name"]: r["raw_value"] for r in rep_a["parameters"]}
    assert values["a"] == pytest.approx(1.0, abs=1e-6)
    assert values["b"] == pytest.approx(0.0, abs=1e-6)


def test_fit_report_loads_as_snapshot(tmp_path):
    import scatterfit as sf
    fit_file = _fit_setup(tmp_path)
    out = str(tmp_path / "results.json")
    assert main(["fit", fit_file, "--out", out]) == 0
    report = json.load(open(out))
    ws = Workspace.load(fit_file)
    sf.load_snapshot(ws.pool(), report)
    assert ws.parameters["R"].raw_value == pytest.approx(7.5, rel=1e-4)


def _free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_serve_health_and_sigint_persistence(tmp_path):
    model = _write(tmp_path, SPHERE)
    port = _free_port()
    out = str(tmp_path / "state.json")
    proc = subprocess.Popen(
        [sys.executable, "-m", "scatterfit.cli", "serve", model,
         "--port", str(port), "--out", out],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    base = "http://127.0.0.1:%d" % port
    try:
        deadline = time.time() + 30
        last_error = None
        while time.time() < deadline:
            try:
                with urllib.request.urlopen(base + "/api/health",
                                            timeout=1) as resp:
                    assert resp.status == 200
                    break
            except Exception as exc:
                last_error = exc
                time.sleep(0.15)
        else:
            raise AssertionError("service never came up: %r" % last_error)
        with urllib.request.urlopen(base + "/api/session",
                                    timeout=5) as resp:
            info = json.load(resp)
        assert {p["name"] for p in info["parameters"]} == {"R", "scale",
                                                           "bg"}
    finally:
        proc.send_signal(signal.SIGINT)
        try:
            code = proc.wait(timeout=20)
        except subprocess.TimeoutExpired:
            proc.kill()
            raise
    assert code == 0
    snapshot = json.load(open(out))
    assert {r["name"] for r in snapshot["parameters"]} == {"R", "scale",
                                                           "bg"}


def test_serve_port_in_use_fails(tmp_path):
    model = _write(tmp_path, SPHERE)
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        proc = subprocess.run(
            [sys.executable, "-m", "scatterfit.cli", "serve", model,
             "--port", str(port)],
            capture_output=True, timeout=60)
        assert proc.returncode != 0
    finally:
        blocker.close()
