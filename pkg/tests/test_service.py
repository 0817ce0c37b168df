"""HTTP API behavior: inventory, edits, curves, fits over SSE."""

import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

import scatterfit as sf
from scatterfit.modelfile import Workspace
from scatterfit.service import create_app

SPHERE_TEXT = ("scale * (3*(sin(q*R) - q*R*cos(q*R))/(q*R)^3)^2 + bg")


def sphere_doc():
    return {
        "name": "sphere session",
        "parameters": {
            "R": {"value": 7.5, "bounds": [1.0, 20.0]},
            "scale": {"value": 4.5e5},
            "bg": {"value": 1.0, "fixed": True},
        },
        "variables": ["q"],
        "functors": {"I": {"kind": "expr", "text": SPHERE_TEXT}},
    }


def wafer_doc():
    return {
        "parameters": {
            "rho_film": {"value": 6.0e-4},
            "d_film": {"value": 40.0, "bounds": [5.0, 80.0]},
        },
        "variables": ["q"],
        "materials": {
            "air": {"sld_re": 0.0},
            "film": {"sld_re": "rho_film"},
            "si": {"sld_re": 2.074e-4, "sld_im": 1e-7},
        },
        "samples": {
            "wafer": {
                "ambient": "air",
                "substrate": {"material": "si", "roughness": 0.3},
                "items": [{"type": "layer", "material": "film",
                           "thickness": "d_film", "roughness": 0.2}],
            },
        },
        "functors": {"R": {"kind": "specrefl", "q": "q",
                           "sample": "wafer"}},
    }


def fit_doc(tmp_path, start=7.125, n_points=400):
    truth = Workspace(sphere_doc())
    q = np.linspace(0.005, 2.0, n_points)
    values = truth.functors["I"](q)
    data = tmp_path / "sphere.csv"
    data.write_text("".join("%.12g,%.12g\n" % (a, b)
                            for a, b in zip(q, values)))
    doc = sphere_doc()
    doc["parameters"]["R"]["value"] = start
    doc["parameters"]["scale"]["fixed"] = True
    doc["datasets"] = {"obs": {"file": "sphere.csv"}}
    doc["models"] = {"m": {"functor": "I", "dataset": "obs"}}
    doc["fit"] = {"optimizer": "lm"}
    return doc, str(tmp_path)


def make_client(doc, base_dir="."):
    ws = Workspace(doc, base_dir=base_dir)
    app = create_app(ws)
    return TestClient(app), ws


def sse_events(client, path="/api/fit/events", limit=500):
    events = []
    with client.stream("GET", path) as resp:
        assert resp.status_code == 200
        assert resp.headers["content-type"].startswith("text/event-stream")
        for line in resp.iter_lines():
            if line.startswith("data: "):
                events.append(json.loads(line[len("data: "):]))
                if len(events) >= limit:
                    break
    return events


def wait_idle(client, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        if not client.get("/api/session").json()["fit"]["running"]:
            return
        time.sleep(0.05)
    raise AssertionError("fit still running after %.0fs" % timeout)


def test_health():
    client, _ = make_client(sphere_doc())
    resp = client.get("/api/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok"}


def test_session_inventory(tmp_path):
    doc, base = fit_doc(tmp_path)
    client, ws = make_client(doc, base)
    info = client.get("/api/session").json()
    assert info["name"] == "sphere session"
    assert info["revision"] == 0
    params = {p["id"]: p for p in info["parameters"]}
    assert set(params) == {"R", "scale", "bg"}
    assert params["R"]["raw_value"] == 7.125
    assert params["R"]["bounds"] == [1.0, 20.0]
    assert params["bg"]["fixed"] is True
    functor, = info["functors"]
    assert functor["name"] == "I" and functor["variables"] == ["q"]
    model, = info["models"]
    assert model["dataset"] == "obs"
    assert model["chi2"] == pytest.approx(ws.models["m"].chi2())
    dataset, = info["datasets"]
    assert dataset["n"] == 400 and dataset["n_active"] == 400
    assert info["fit"] == {"running": False, "status": None}


def test_patch_updates_and_bumps_revision():
    client, ws = make_client(sphere_doc())
    resp = client.patch("/api/params", json={"R": {"raw_value": 9.0}})
    assert resp.status_code == 200
    assert resp.json() == {"revision": 1}
    assert ws.parameters["R"].raw_value == 9.0
    resp = client.patch("/api/params",
                        json={"bg": {"fixed": False},
                              "R": {"bounds": [2.0, 30.0]}})
    assert resp.status_code == 200
    assert resp.json() == {"revision": 2}
    assert ws.parameters["bg"].fixed is False
    assert ws.parameters["R"].bounds == (2.0, 30.0)


def test_patch_unknown_id_is_404():
    client, _ = make_client(sphere_doc())
    resp = client.patch("/api/params", json={"zz": {"raw_value": 1.0}})
    assert resp.status_code == 404
    assert "zz" in resp.json()["detail"]


def test_patch_validation_failure_rolls_back_everything():
    client, ws = make_client(sphere_doc())
    # second entry violates the bounds, so the first must not stick either
    resp = client.patch("/api/params",
                        json={"scale": {"raw_value": 1.0},
                              "R": {"raw_value": 500.0}})
    assert resp.status_code == 422
    assert ws.parameters["scale"].raw_value == 4.5e5
    assert ws.parameters["R"].raw_value == 7.5
    assert client.get("/api/session").json()["revision"] == 0
    resp = client.patch("/api/params", json={"R": {"sign": -1}})
    assert resp.status_code == 422
    assert "sign" in resp.json()["detail"]


def test_curve_matches_library_exactly():
    client, ws = make_client(sphere_doc())
    resp = client.get("/api/curve",
                      params={"functor": "I", "grid": "q=0.01:1:0.01"})
    assert resp.status_code == 200
    payload = resp.json()
    q = np.arange(0.01, 1.0, 0.01)
    expected = ws.functors["I"](q)
    assert payload["revision"] == 0
    assert payload["shape"] == [len(q)]
    assert payload["variables"] == ["q"]
    assert payload["coordinates"]["q"] == [float(v) for v in q]
    assert payload["values"] == [float(v) for v in expected]

    client.patch("/api/params", json={"R": {"raw_value": 6.0}})
    payload = client.get(
        "/api/curve",
        params={"functor": "I", "grid": "q=0.01:1:0.01"}).json()
    assert payload["revision"] == 1
    assert payload["values"] == [float(v) for v in ws.functors["I"](q)]


def test_curve_errors():
    client, _ = make_client(sphere_doc())
    resp = client.get("/api/curve",
                      params={"functor": "nope", "grid": "q=0:1:0.1"})
    assert resp.status_code == 404
    resp = client.get("/api/curve",
                      params={"functor": "I", "grid": "w=0:1:0.1"})
    assert resp.status_code == 422
    assert "q" in resp.json()["detail"]
    resp = client.get("/api/curve",
                      params={"functor": "I", "grid": "q=1:0:0.1"})
    assert resp.status_code == 422


def test_profile_matches_library():
    client, ws = make_client(wafer_doc())
    resp = client.get("/api/profile",
                      params={"sample": "wafer", "zmin": -20,
                              "zmax": 60, "n": 81})
    assert resp.status_code == 200
    payload = resp.json()
    z = np.linspace(-20, 60, 81)
    assert payload["z"] == [float(v) for v in z]
    expected = sf.sld_profile(ws.samples["wafer"], z)
    assert payload["re"] == [float(v) for v in expected]
    assert payload["re"][0] == pytest.approx(0.0, abs=1e-12)
    assert payload["re"][-1] == pytest.approx(2.074e-4, rel=1e-6)

    defaults = client.get("/api/profile", params={"sample": "wafer"})
    assert defaults.status_code == 200
    body = defaults.json()
    assert body["z"][0] < 0 < 40 < body["z"][-1]
    assert client.get("/api/profile",
                      params={"sample": "x"}).status_code == 404


def test_fit_lifecycle_and_event_stream(tmp_path):
    doc, base = fit_doc(tmp_path)
    client, ws = make_client(doc, base)
    assert client.get("/api/fit/events").status_code == 404

    resp = client.post("/api/fit", json={})
    assert resp.status_code == 202
    body = resp.json()
    assert body["fit_id"] == 1
    events = sse_events(client)
    assert events, "no events received"
    terminal = events[-1]
    assert terminal["type"] == "done"
    assert terminal["status"] == "converged"
    assert [e["type"] for e in events[:-1]] == ["progress"] * (len(events)
                                                              - 1)
    iterations = [e["iteration"] for e in events[:-1]]
    assert iterations == sorted(iterations)
    chi2s = [e["chi2"] for e in events[:-1]] + [terminal["chi2"]]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(chi2s, chi2s[1:]))
    assert terminal["chi2"] < 1e-10
    assert terminal["errors"]["R"] is not None
    assert ws.parameters["R"].raw_value == pytest.approx(7.5, rel=1e-4)

    wait_idle(client)
    info = client.get("/api/session").json()
    assert info["fit"] == {"running": False, "status": "converged"}
    assert info["revision"] > 0
    # a finished stream can be replayed by a late subscriber
    replay = sse_events(client)
    assert replay[-1]["type"] == "done"


def test_fit_conflicts_and_interrupt(tmp_path):
    doc, base = fit_doc(tmp_path, n_points=120)
    doc["fit"] = {"optimizer": "de",
                  "options": {"population_size": 8,
                              "max_generations": 500000}}
    client, ws = make_client(doc, base)
    before = ws.parameters["R"].raw_value
    assert client.post("/api/fit", json={}).status_code == 202
    try:
        assert client.post("/api/fit", json={}).status_code == 409
        resp = client.patch("/api/params", json={"R": {"raw_value": 3.0}})
        assert resp.status_code == 409
        snap = {"parameters": [{"id": "R", "raw_value": 3.0}]}
        assert client.put("/api/params/snapshot",
                          json=snap).status_code == 409
        assert client.get("/api/session").json()["fit"]["running"] is True
    finally:
        resp = client.post("/api/fit/interrupt")
    assert resp.json() == {"interrupted": True}
    events = sse_events(client)
    assert events[-1]["type"] == "done"
    assert events[-1]["status"] == "interrupted"
    wait_idle(client)
    # best-so-far stays applied, and the rejected write never landed
    assert ws.parameters["R"].raw_value != 3.0
    final_chi2 = client.get("/api/session").json()["models"][0]["chi2"]
    assert final_chi2 <= events[-1]["chi2"] * (1 + 1e-9)
    assert client.post("/api/fit/interrupt").json() == \
        {"interrupted": False}
    assert before == 7.125  # sanity on the fixture


def test_fit_option_validation(tmp_path):
    doc, base = fit_doc(tmp_path)
    client, _ = make_client(doc, base)
    resp = client.post("/api/fit",
                       json={"options": {"warp_speed": 11}})
    assert resp.status_code == 422
    assert "warp_speed" in resp.json()["detail"]
    assert client.get("/api/session").json()["fit"]["running"] is False


def test_snapshot_round_trip():
    client, ws = make_client(sphere_doc())
    snap = client.get("/api/params/snapshot").json()
    assert {r["id"] for r in snap["parameters"]} == {"R", "scale", "bg"}
    client.patch("/api/params", json={"R": {"raw_value": 12.0},
                                      "scale": {"raw_value": 1.0}})
    assert ws.parameters["R"].raw_value == 12.0
    resp = client.put("/api/params/snapshot", json=snap)
    assert resp.status_code == 200
    assert resp.json()["revision"] == 2
    assert ws.parameters["R"].raw_value == 7.5
    assert ws.parameters["scale"].raw_value == 4.5e5


def test_snapshot_put_unknown_id_rolls_back():
    client, ws = make_client(sphere_doc())
    snap = {
        "parameters": [
            {"id": "R", "raw_value": 2.0},
            {"id": "ghost", "raw_value": 1.0},
        ],
    }
    resp = client.put("/api/params/snapshot", json=snap)
    assert resp.status_code == 422
    assert "ghost" in resp.json()["detail"]
    assert ws.parameters["R"].raw_value == 7.5
    assert client.get("/api/session").json()["revision"] == 0
