"""Model-document loading: resolution order, error paths, grid parsing."""

import json

import numpy as np
import pytest

import scatterfit as sf
from scatterfit.modelfile import (
    GridError, ModelFileError, Workspace, parse_grid,
)

SPHERE_TEXT = ("scale * (3*(sin(q*R) - q*R*cos(q*R))/(q*R)^3)^2 + bg")


def sphere_doc():
    return {
        "name": "sphere",
        "parameters": {
            "R": {"value": 7.5, "bounds": [1.0, 20.0], "units": "nm"},
            "scale": {"value": 4.5e5},
            "bg": {"value": 1.0, "fixed": True},
        },
        "variables": ["q"],
        "functors": {"I": {"kind": "expr", "text": SPHERE_TEXT}},
    }


def refl_doc():
    return {
        "parameters": {
            "rho_film": {"value": 6.0e-4},
            "d_film": {"value": 40.0, "bounds": [5.0, 80.0]},
            "sig": {"value": 0.4},
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
                "substrate": {"material": "si", "roughness": "sig"},
                "items": [{"type": "layer", "material": "film",
                           "thickness": "d_film", "roughness": 0.2}],
            },
        },
        "functors": {
            "R": {"kind": "specrefl", "q": "q", "sample": "wafer"},
        },
    }


def test_workspace_builds_sphere_model():
    ws = Workspace(sphere_doc())
    assert set(ws.parameters) == {"R", "scale", "bg"}
    assert ws.parameters["bg"].fixed
    assert ws.parameters["R"].bounds == (1.0, 20.0)
    functor = ws.functors["I"]
    assert [v.name for v in functor.variables()] == ["q"]
    grid = np.array([0.1, 0.5])
    direct = sf.parse(SPHERE_TEXT, {"q": sf.var("q"),
                                    "R": ws.parameters["R"],
                                    "scale": ws.parameters["scale"],
                                    "bg": ws.parameters["bg"]})
    assert np.allclose(functor(grid), direct(grid), rtol=1e-15)


def test_reflectivity_document_matches_library_objects():
    ws = Workspace(refl_doc())
    functor = ws.functors["R"]
    grid = np.linspace(0.02, 0.6, 100)
    film = sf.layer("film", sf.amorphous("film", ws.parameters["rho_film"]),
                    ws.parameters["d_film"], roughness=0.2)
    sample = sf.multilayer("wafer", sf.air(),
                           sf.substrate("sub",
                                        sf.amorphous("si", 2.074e-4, 1e-7),
                                        roughness=ws.parameters["sig"]))
    sample.add(film)
    direct = sf.specrefl("R", sf.var("q"), sample)
    assert np.allclose(functor(grid), direct(grid), rtol=1e-13)


def test_parameter_shorthand_plain_number():
    ws = Workspace({"parameters": {"a": 3.5}, "variables": [],
                    "functors": {"f": {"kind": "expr", "text": "a*2"}}})
    assert ws.parameters["a"].value == 3.5
    assert sf.scalar(ws.functors["f"]) == 7.0


def test_unknown_section_and_field_errors_name_the_path():
    with pytest.raises(ModelFileError, match="bogus"):
        Workspace({"bogus": {}})
    with pytest.raises(ModelFileError, match="parameters.R"):
        Workspace({"parameters": {"R": {"scale": 2.0}}})
    with pytest.raises(ModelFileError, match=r"materials\.m.*sld_re"):
        Workspace({"materials": {"m": {}}})
    with pytest.raises(ModelFileError, match=r"functors\.f.*text"):
        Workspace({"functors": {"f": {"kind": "expr"}}})


def test_bad_expression_reports_field():
    doc = sphere_doc()
    doc["functors"]["I"]["text"] = "scale * (3*(sin(q*R)"
    with pytest.raises(ModelFileError, match="functors.I.text"):
        Workspace(doc)


def test_unresolved_reference_rejected():
    doc = sphere_doc()
    doc["functors"]["I"]["text"] = "scale * q * missing"
    with pytest.raises(ModelFileError, match="missing"):
        Workspace(doc)


def test_forward_references_rejected():
    doc = sphere_doc()
    doc["functors"] = {
        "total": {"kind": "expr", "text": "part + 1"},
        "part": {"kind": "expr", "text": "q * R"},
    }
    with pytest.raises(ModelFileError, match="part"):
        Workspace(doc)


def test_functor_chaining_in_order_works():
    doc = sphere_doc()
    doc["functors"] = {
        "part": {"kind": "expr", "text": "q * R"},
        "total": {"kind": "expr", "text": "part + 1"},
    }
    ws = Workspace(doc)
    grid = np.array([0.2])
    assert ws.functors["total"](grid)[0] == pytest.approx(0.2 * 7.5 + 1.0)


def test_bounds_violation_rejected_at_load():
    doc = sphere_doc()
    doc["parameters"]["R"]["value"] = 50.0
    with pytest.raises(ModelFileError, match="parameters.R"):
        Workspace(doc)


def test_variable_in_structure_rejected():
    doc = refl_doc()
    doc["samples"]["wafer"]["items"][0]["thickness"] = "d_film * q"
    with pytest.raises(ModelFileError, match="items"):
        Workspace(doc)


def test_dataset_loading_and_masking(tmp_path):
    data_file = tmp_path / "curve.dat"
    lines = ["# q I sigma"]
    for i in range(20):
        lines.append("%g %g %g" % (0.1 * (i + 1), 100.0 - i, 1.0))
    data_file.write_text("\n".join(lines) + "\n")
    doc = sphere_doc()
    doc["datasets"] = {
        "d": {"file": "curve.dat",
              "mask": [{"type": "indices", "values": [0, 1]},
                       {"type": "coord_range", "low": 1.95, "high": 2.05}]},
    }
    doc["models"] = {"m": {"functor": "I", "dataset": "d",
                           "scaling": "linear"}}
    ws = Workspace(doc, base_dir=str(tmp_path))
    ds = ws.datasets["d"]
    assert ds.n == 20
    assert ds.n_active == 17  # two leading points plus q = 2.0
    assert ws.models["m"].scaling == "linear"


def test_missing_data_file_reports_path():
    doc = sphere_doc()
    doc["datasets"] = {"d": {"file": "nope.dat"}}
    with pytest.raises(ModelFileError, match="datasets.d.file"):
        Workspace(doc)


def test_fit_plumbing_and_reserialization(tmp_path):
    data_file = tmp_path / "sim.csv"
    ws0 = Workspace(sphere_doc())
    grid = np.arange(0.05, 2.0, 0.01)
    values = ws0.functors["I"](grid)
    with open(data_file, "w") as fh:
        fh.write("# q,I\n")
        for q, v in zip(grid, values):
            fh.write("%.9g,%.9g\n" % (q, v))
    doc = sphere_doc()
    doc["parameters"]["R"]["value"] = 7.1
    doc["datasets"] = {"sim": {"file": "sim.csv"}}
    doc["models"] = {"m": {"functor": "I", "dataset": "sim"}}
    doc["fit"] = {"optimizer": "lm", "models": "all",
                  "options": {"max_iter": 80}}
    ws = Workspace(doc, base_dir=str(tmp_path))
    method, options = ws.optimizer()
    assert method == "lm"
    assert options.max_iter == 80
    result = sf.fit_lm(ws.fit_target(), options=options)
    assert result.status == "converged"
    assert ws.parameters["R"].value == pytest.approx(7.5, rel=1e-6)

    updated = ws.to_doc()
    assert updated["parameters"]["R"]["value"] == pytest.approx(7.5,
                                                               rel=1e-6)
    # unrelated sections survive verbatim
    assert updated["functors"] == doc["functors"]
    # the updated document reloads into an equivalent workspace
    ws2 = Workspace(updated, base_dir=str(tmp_path))
    probe = np.array([0.3, 0.9])
    assert np.allclose(ws2.functors["I"](probe), ws.functors["I"](probe),
                       rtol=1e-12)


def test_optimizer_validation():
    doc = sphere_doc()
    doc["fit"] = {"optimizer": "annealing"}
    with pytest.raises(ModelFileError, match="optimizer"):
        Workspace(doc).optimizer()
    doc["fit"] = {"optimizer": "lm", "options": {"population_size": 9}}
    with pytest.raises(ModelFileError, match="population_size"):
        Workspace(doc).optimizer()
    doc["fit"] = {"optimizer": "de", "options": {"population_size": 9}}
    method, options = Workspace(doc).optimizer(seed=42)
    assert method == "de"
    assert options.population_size == 9
    assert options.seed == 42


def test_smear_and_average_functor_kinds():
    doc = sphere_doc()
    doc["parameters"]["width"] = {"value": 0.02}
    doc["functors"]["I_smeared"] = {
        "kind": "smear", "base": "I", "variable": "q", "fwhm": "width",
        "method": "fixed", "order": 16,
    }
    doc["functors"]["I_avg"] = {
        "kind": "average", "base": "I", "parameter": "R", "fwhm": 1.0,
        "method": "fixed", "order": 8,
    }
    ws = Workspace(doc)
    grid = np.array([0.4, 0.8])
    sharp = ws.functors["I"](grid)
    smeared = ws.functors["I_smeared"](grid)
    averaged = ws.functors["I_avg"](grid)
    assert not np.allclose(sharp, smeared, rtol=1e-6)
    assert not np.allclose(sharp, averaged, rtol=1e-6)
    direct = sf.convolve_variable(
        ws.functors["I"], ws.variables["q"], ws.parameters["width"],
        spec=sf.IntegrationSpec(method="fixed", order=16))
    assert np.allclose(smeared, direct(grid), rtol=1e-12)


def test_sas_document_composition():
    doc = {
        "parameters": {"rho": 2.0, "period": {"value": 500.0},
                       "n_fins": {"value": 5.0}},
        "variables": ["qx", "qy", "qz"],
        "potentials": {
            "fin": {"shapes": [
                {"type": "box", "density": "rho",
                 "size": [20.0, 1000.0, 30.0]},
            ]},
        },
        "functors": {
            "F": {"kind": "formfactor", "potential": "fin",
                  "q": ["qx", "qy", "qz"]},
            "L": {"kind": "lattice", "q": "qx", "period": "period",
                  "count": "n_fins"},
            "I": {"kind": "sas", "form": "F", "lattices": ["L"]},
        },
    }
    ws = Workspace(doc)
    qx = np.linspace(0.001, 0.05, 50)
    zeros = np.zeros_like(qx)
    manual = (np.abs(ws.functors["F"](qx, zeros, zeros)) ** 2
              * ws.functors["L"](qx))
    assert np.allclose(ws.functors["I"](qx, zeros, zeros), manual,
                       rtol=1e-12)


def test_pnr_document():
    doc = refl_doc()
    doc["parameters"]["m_fe"] = {"value": 3.0e-5}
    doc["samples"]["wafer"]["items"][0]["msld"] = "m_fe"
    doc["functors"]["Rpp"] = {"kind": "pnrspec", "q": "q",
                              "sample": "wafer", "p_incident": 1.0,
                              "p_final": 1.0}
    doc["functors"]["Rmm"] = {"kind": "pnrspec", "q": "q",
                              "sample": "wafer", "p_incident": -1.0,
                              "p_final": -1.0}
    ws = Workspace(doc)
    grid = np.linspace(0.02, 0.4, 60)
    up = ws.functors["Rpp"](grid)
    down = ws.functors["Rmm"](grid)
    assert not np.allclose(up, down, rtol=1e-3)


def test_grid_parsing_forms():
    axes, shape, ranged = parse_grid("0:4:0.001")
    assert shape == (4000,)
    assert ranged == [None]
    assert axes[None][0] == 0.0
    assert axes[None][-1] == pytest.approx(3.999)

    axes, shape, ranged = parse_grid("q=0.1:0.5:0.1")
    assert list(axes) == ["q"]
    assert np.allclose(axes["q"], [0.1, 0.2, 0.3, 0.4])

    axes, shape, ranged = parse_grid("qx=0:1:0.5, qy=0:0.2:0.1, qz=3")
    assert shape == (2, 2)
    assert ranged == ["qx", "qy"]
    assert np.allclose(axes["qx"], [0.0, 0.0, 0.5, 0.5])
    assert np.allclose(axes["qy"], [0.0, 0.1, 0.0, 0.1])
    assert np.allclose(axes["qz"], [3.0, 3.0, 3.0, 3.0])


def test_grid_parsing_errors():
    for bad in ("", "q=", "q=1:2", "q=a:b:c", "q=0:1:0", "q=1:0:0.1",
                "0:1:0.1,0:2:0.1", "q=0:1:0.1,q=0:2:0.1"):
        with pytest.raises(GridError):
            parse_grid(bad)


def test_load_rejects_bad_json(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text("{ not json")
    with pytest.raises(ModelFileError, match="JSON"):
        Workspace.load(str(bad))
    with pytest.raises(ModelFileError, match="cannot read"):
        Workspace.load(str(tmp_path / "absent.json"))


def test_document_round_trip_is_json_serializable(tmp_path):
    ws = Workspace(sphere_doc())
    text = json.dumps(ws.to_doc())
    again = Workspace(json.loads(text))
    probe = np.array([0.25])
    assert again.functors["I"](probe)[0] == pytest.approx(
        ws.functors["I"](probe)[0], rel=1e-15)
