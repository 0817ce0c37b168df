"""Declarative JSON model files: one document describing parameters,
materials, samples, potentials, functors, datasets, models and fit setup.

The document is the single exchange format between the command line, the
HTTP service and the browser UI.  Expression strings inside it use the
same text grammar as :func:`scatterfit.parse`; entity references are by
name and must point at entities declared earlier in the document, which
keeps the reference graph acyclic by construction.
"""

from __future__ import annotations

import copy
import json
import os

import numpy as np

from . import dataset as _dataset
from . import expr as _expr
from . import fit as _fit
from . import models as _models
from . import potentials as _potential
from . import quadrature as _quad
from . import reflectivity as _refl

__all__ = ["ModelFileError", "Workspace", "parse_grid", "GridError"]


class ModelFileError(ValueError):
    """Invalid model document; the message names the offending field."""


class GridError(ValueError):
    """Invalid grid specification string."""


def _fail(path, message):
    raise ModelFileError("%s: %s" % (path, message))


def _require(doc, path, key, types, default=_fail):
    if key not in doc:
        if default is _fail:
            _fail(path, "missing required field %r" % key)
        return default
    value = doc[key]
    if types is not None and not isinstance(value, types):
        _fail("%s.%s" % (path, key),
              "expected %s, got %s" % (
                  "/".join(t.__name__ for t in types)
                  if isinstance(types, tuple) else types.__name__,
                  type(value).__name__))
    return value


_NUMBER = (int, float)


class Workspace:
    """A model document resolved into live library objects.

    Entities are built in declaration order; every cross-reference must
    resolve against what exists already.  The original document is kept
    so a workspace can be re-serialized with updated parameter values
    while preserving everything else verbatim.
    """

    def __init__(self, doc, base_dir="."):
        if not isinstance(doc, dict):
            raise ModelFileError("top level: expected a JSON object")
        self.doc = copy.deepcopy(doc)
        self.base_dir = base_dir
        self.name = str(doc.get("name", ""))
        self.parameters: dict = {}
        self.variables: dict = {}
        self.materials: dict = {}
        self.samples: dict = {}
        self.potentials: dict = {}
        self.functors: dict = {}
        self.datasets: dict = {}
        self.models: dict = {}
        self.fit_spec = {}
        self._build()

    # -- construction --------------------------------------------------------

    def _build(self):
        doc = self.doc
        known = {"name", "parameters", "variables", "materials", "samples",
                 "potentials", "functors", "datasets", "models", "fit"}
        for key in doc:
            if key not in known:
                _fail(key, "unknown section")
        self._build_parameters(doc.get("parameters", {}))
        self._build_variables(doc.get("variables", []))
        self._build_materials(doc.get("materials", {}))
        self._build_samples(doc.get("samples", {}))
        self._build_potentials(doc.get("potentials", {}))
        self._build_functors(doc.get("functors", {}))
        self._build_datasets(doc.get("datasets", {}))
        self._build_models(doc.get("models", {}))
        self.fit_spec = doc.get("fit", {})
        if not isinstance(self.fit_spec, dict):
            _fail("fit", "expected an object")
        declared = self.fit_spec.get("models", "all")
        if declared != "all":
            if not isinstance(declared, list):
                _fail("fit.models", "expected a list of names or 'all'")
            for m in declared:
                if m not in self.models:
                    _fail("fit.models", "unknown model %r" % m)

    def _build_parameters(self, section):
        if not isinstance(section, dict):
            _fail("parameters", "expected an object of name -> settings")
        for name, spec in section.items():
            path = "parameters.%s" % name
            if isinstance(spec, _NUMBER):
                spec = {"value": spec}
            if not isinstance(spec, dict):
                _fail(path, "expected a number or an object")
            value = _require(spec, path, "value", _NUMBER)
            bounds = spec.get("bounds")
            if bounds is not None:
                if (not isinstance(bounds, list) or len(bounds) != 2
                        or not all(isinstance(b, _NUMBER) for b in bounds)):
                    _fail(path + ".bounds", "expected [low, high]")
                bounds = (float(bounds[0]), float(bounds[1]))
            try:
                # uid = name keeps snapshots portable between processes
                self.parameters[name] = _expr.par(
                    name, float(value),
                    scale=float(spec.get("scale", 1.0)),
                    bounds=bounds,
                    fixed=bool(spec.get("fixed", False)),
                    units=str(spec.get("units", "")),
                    uid=name)
            except ValueError as exc:
                _fail(path, str(exc))

    def _build_variables(self, section):
        if not isinstance(section, list):
            _fail("variables", "expected a list of names")
        for slot, name in enumerate(section):
            if not isinstance(name, str):
                _fail("variables[%d]" % slot, "expected a name")
            if name in self.parameters:
                _fail("variables[%d]" % slot,
                      "%r is already a parameter" % name)
            self.variables[name] = _expr.Variable(name, slot=slot)

    def _expr_env(self):
        env: dict = {}
        env.update(self.functors)
        env.update(self.variables)
        env.update(self.parameters)
        return env

    def _value_expr(self, value, path, env=None):
        """A number or an expression string, resolved against parameters."""
        if isinstance(value, _NUMBER):
            return _expr.constant(value)
        if isinstance(value, str):
            try:
                return _expr.parse(value, env or self._expr_env())
            except _expr.ParseError as exc:
                _fail(path, "bad expression %r (%s)" % (value, exc))
        _fail(path, "expected a number or expression string")

    def _build_materials(self, section):
        if not isinstance(section, dict):
            _fail("materials", "expected an object")
        for name, spec in section.items():
            path = "materials.%s" % name
            if not isinstance(spec, dict):
                _fail(path, "expected an object")
            try:
                self.materials[name] = _refl.Material(
                    name,
                    self._value_expr(
                        _require(spec, path, "sld_re", (int, float, str)),
                        path + ".sld_re"),
                    self._value_expr(spec.get("sld_im", 0.0),
                                     path + ".sld_im"))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ModelFileError):
                    raise
                _fail(path, str(exc))

    def _material(self, name, path):
        if name not in self.materials:
            _fail(path, "unknown material %r" % name)
        return self.materials[name]

    def _build_layer(self, spec, path, default_name):
        if not isinstance(spec, dict):
            _fail(path, "expected an object")
        mat = self._material(_require(spec, path, "material", str), path)
        try:
            return _refl.Layer(
                str(spec.get("name", default_name)), mat,
                self._value_expr(_require(spec, path, "thickness",
                                          (int, float, str)),
                                 path + ".thickness"),
                self._value_expr(spec.get("roughness", 0.0),
                                 path + ".roughness"),
                self._value_expr(spec.get("msld", 0.0), path + ".msld"))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ModelFileError):
                raise
            _fail(path, str(exc))

    def _build_samples(self, section):
        if not isinstance(section, dict):
            _fail("samples", "expected an object")
        for name, spec in section.items():
            path = "samples.%s" % name
            if not isinstance(spec, dict):
                _fail(path, "expected an object")
            ambient = self._material(_require(spec, path, "ambient", str),
                                     path + ".ambient")
            sub_spec = _require(spec, path, "substrate", dict)
            sub_path = path + ".substrate"
            sub = _refl.substrate(
                str(sub_spec.get("name", "substrate")),
                self._material(_require(sub_spec, sub_path, "material", str),
                               sub_path),
                roughness=self._value_expr(sub_spec.get("roughness", 0.0),
                                           sub_path + ".roughness"),
                msld=self._value_expr(sub_spec.get("msld", 0.0),
                                      sub_path + ".msld"))
            sample = _refl.Multilayer(name, ambient, sub)
            items = spec.get("items", [])
            if not isinstance(items, list):
                _fail(path + ".items", "expected a list")
            for i, item in enumerate(items):
                ipath = "%s.items[%d]" % (path, i)
                if not isinstance(item, dict):
                    _fail(ipath, "expected an object")
                kind = item.get("type", "layer")
                if kind == "layer":
                    sample.add(self._build_layer(item, ipath,
                                                 "layer%d" % i))
                elif kind == "stack":
                    layers = _require(item, ipath, "layers", list)
                    built = [self._build_layer(l, "%s.layers[%d]" % (ipath, j),
                                               "layer%d_%d" % (i, j))
                             for j, l in enumerate(layers)]
                    try:
                        sample.add(_refl.Stack(
                            built,
                            repeats=self._value_expr(item.get("repeats", 1),
                                                     ipath + ".repeats"),
                            name=str(item.get("name", "stack%d" % i))))
                    except ValueError as exc:
                        _fail(ipath, str(exc))
                else:
                    _fail(ipath, "unknown item type %r" % kind)
            self.samples[name] = sample

    def _build_potentials(self, section):
        if not isinstance(section, dict):
            _fail("potentials", "expected an object")
        for name, spec in section.items():
            path = "potentials.%s" % name
            if not isinstance(spec, dict):
                _fail(path, "expected an object")
            pot = _potential.Potential(name)
            shapes = _require(spec, path, "shapes", list)
            if not shapes:
                _fail(path + ".shapes", "at least one shape required")
            for i, shape_spec in enumerate(shapes):
                spath = "%s.shapes[%d]" % (path, i)
                if not isinstance(shape_spec, dict):
                    _fail(spath, "expected an object")
                mode = shape_spec.get("mode", "add")
                if mode not in ("add", "subtract"):
                    _fail(spath + ".mode", "expected 'add' or 'subtract'")
                kind = _require(shape_spec, spath, "type", str)
                density = self._value_expr(
                    _require(shape_spec, spath, "density", (int, float, str)),
                    spath + ".density")
                sname = str(shape_spec.get("name", "shape%d" % i))
                if kind == "box":
                    size = _require(shape_spec, spath, "size", list)
                    if len(size) != 3:
                        _fail(spath + ".size", "expected three edge lengths")
                    center = shape_spec.get("center", [0.0, 0.0, 0.0])
                    if not isinstance(center, list) or len(center) != 3:
                        _fail(spath + ".center", "expected three components")
                    try:
                        shape = _potential.Box(
                            sname, density,
                            [self._value_expr(s, spath + ".size")
                             for s in size],
                            [self._value_expr(c, spath + ".center")
                             for c in center])
                    except (TypeError, ValueError) as exc:
                        if isinstance(exc, ModelFileError):
                            raise
                        _fail(spath, str(exc))
                elif kind == "polyhedron":
                    verts = _require(shape_spec, spath, "vertices", list)
                    faces = _require(shape_spec, spath, "faces", list)
                    built_verts = []
                    for j, v in enumerate(verts):
                        if not isinstance(v, list) or len(v) != 3:
                            _fail("%s.vertices[%d]" % (spath, j),
                                  "expected three components")
                        built_verts.append(
                            [self._value_expr(c, "%s.vertices[%d]"
                                              % (spath, j)) for c in v])
                    try:
                        shape = _potential.Polyhedron(sname, density,
                                                      built_verts, faces)
                    except ValueError as exc:
                        _fail(spath, str(exc))
                else:
                    _fail(spath + ".type", "unknown shape type %r" % kind)
                getattr(pot, mode)(shape)
            self.potentials[name] = pot

    def _variable(self, name, path):
        if name not in self.variables:
            _fail(path, "unknown variable %r" % name)
        return self.variables[name]

    def _functor(self, name, path):
        if name not in self.functors:
            _fail(path, "unknown functor %r (forward references are not "
                        "allowed)" % name)
        return self.functors[name]

    def _integration_spec(self, spec, path):
        kwargs = {}
        for key in ("method", "order", "rel_tol", "abs_tol", "max_depth"):
            if key in spec:
                kwargs[key] = spec[key]
        try:
            return _quad.IntegrationSpec(**kwargs) if kwargs else None
        except ValueError as exc:
            _fail(path, str(exc))

    def _build_functors(self, section):
        if not isinstance(section, dict):
            _fail("functors", "expected an object")
        for name, spec in section.items():
            path = "functors.%s" % name
            if not isinstance(spec, dict):
                _fail(path, "expected an object")
            kind = spec.get("kind", "expr")
            if kind == "expr":
                node = self._value_expr(_require(spec, path, "text", str),
                                        path + ".text")
            elif kind in ("specrefl", "pnrspec"):
                q = self._variable(_require(spec, path, "q", str),
                                   path + ".q")
                sname = _require(spec, path, "sample", str)
                if sname not in self.samples:
                    _fail(path + ".sample", "unknown sample %r" % sname)
                formalism = spec.get("formalism", "parratt")
                if formalism not in _refl.FORMALISMS:
                    _fail(path + ".formalism",
                          "expected one of %s" % ", ".join(_refl.FORMALISMS))
                if kind == "specrefl":
                    node = _refl.specrefl(name, q, self.samples[sname],
                                          formalism)
                else:
                    node = _refl.pnrspec(
                        name, q, self.samples[sname],
                        self._value_expr(
                            _require(spec, path, "p_incident",
                                     (int, float, str)), path + ".p_incident"),
                        self._value_expr(
                            _require(spec, path, "p_final", (int, float, str)),
                            path + ".p_final"),
                        formalism)
            elif kind == "formfactor":
                pname = _require(spec, path, "potential", str)
                if pname not in self.potentials:
                    _fail(path + ".potential", "unknown potential %r" % pname)
                qnames = _require(spec, path, "q", list)
                if len(qnames) != 3:
                    _fail(path + ".q", "expected three variable names")
                qv = [self._variable(n, path + ".q") for n in qnames]
                node = _potential.formfactor(name, self.potentials[pname],
                                             *qv)
            elif kind == "lattice":
                node = _potential.lattice(
                    name,
                    self._value_expr(_require(spec, path, "q", (int, float,
                                                                str)),
                                     path + ".q"),
                    self._value_expr(_require(spec, path, "period",
                                              (int, float, str)),
                                     path + ".period"),
                    self._value_expr(_require(spec, path, "count",
                                              (int, float, str)),
                                     path + ".count"))
            elif kind == "sas":
                form = self._functor(_require(spec, path, "form", str),
                                     path + ".form")
                lattices = [self._functor(l, path + ".lattices")
                            for l in spec.get("lattices", [])]
                node = _potential.sas(name, form, lattices)
            elif kind == "smear":
                base = self._functor(_require(spec, path, "base", str),
                                     path + ".base")
                v = self._variable(_require(spec, path, "variable", str),
                                   path + ".variable")
                try:
                    node = _quad.convolve_variable(
                        base, v,
                        self._value_expr(
                            _require(spec, path, "fwhm", (int, float, str)),
                            path + ".fwhm",
                            env=self._expr_env()),
                        spec=self._integration_spec(spec, path),
                        span_sigmas=float(spec.get("span_sigmas", 3.0)),
                        name=name)
                except (TypeError, ValueError) as exc:
                    _fail(path, str(exc))
            elif kind == "average":
                base = self._functor(_require(spec, path, "base", str),
                                     path + ".base")
                pname = _require(spec, path, "parameter", str)
                if pname not in self.parameters:
                    _fail(path + ".parameter", "unknown parameter %r" % pname)
                try:
                    node = _quad.average_parameter(
                        base, self.parameters[pname],
                        self._value_expr(
                            _require(spec, path, "fwhm", (int, float, str)),
                            path + ".fwhm"),
                        spec=self._integration_spec(spec, path),
                        span_sigmas=float(spec.get("span_sigmas", 3.0)),
                        name=name)
                except (TypeError, ValueError) as exc:
                    _fail(path, str(exc))
            else:
                _fail(path + ".kind", "unknown functor kind %r" % kind)
            node.name = name
            self.functors[name] = node

    def _build_datasets(self, section):
        if not isinstance(section, dict):
            _fail("datasets", "expected an object")
        for name, spec in section.items():
            path = "datasets.%s" % name
            if not isinstance(spec, dict):
                _fail(path, "expected an object")
            file_name = _require(spec, path, "file", str)
            full = os.path.join(self.base_dir, file_name)
            if not os.path.exists(full):
                _fail(path + ".file", "no such file: %s" % full)
            columns = spec.get("columns")
            if isinstance(columns, list):
                columns = tuple(columns)
            try:
                ds = _dataset.load_text(full, columns=columns, name=name)
            except (_dataset.DataFormatError, ValueError) as exc:
                _fail(path, str(exc))
            for i, rule in enumerate(spec.get("mask", [])):
                rpath = "%s.mask[%d]" % (path, i)
                if not isinstance(rule, dict):
                    _fail(rpath, "expected an object")
                kind = _require(rule, rpath, "type", str)
                try:
                    if kind == "indices":
                        ds.mask_indices(_require(rule, rpath, "values", list))
                    elif kind == "index_range":
                        ds.mask_index_range(
                            int(_require(rule, rpath, "start", _NUMBER)),
                            int(_require(rule, rpath, "stop", _NUMBER)))
                    elif kind == "coord_range":
                        ds.mask_coord_range(
                            (float(_require(rule, rpath, "low", _NUMBER)),
                             float(_require(rule, rpath, "high", _NUMBER))),
                            dim=int(rule.get("dim", 0)))
                    else:
                        _fail(rpath + ".type", "unknown mask type %r" % kind)
                except (IndexError, ValueError) as exc:
                    _fail(rpath, str(exc))
            self.datasets[name] = ds

    def _build_models(self, section):
        if not isinstance(section, dict):
            _fail("models", "expected an object")
        for name, spec in section.items():
            path = "models.%s" % name
            if not isinstance(spec, dict):
                _fail(path, "expected an object")
            fname = _require(spec, path, "functor", str)
            dname = _require(spec, path, "dataset", str)
            if fname not in self.functors:
                _fail(path + ".functor", "unknown functor %r" % fname)
            if dname not in self.datasets:
                _fail(path + ".dataset", "unknown dataset %r" % dname)
            scaling = spec.get("scaling", "linear")
            try:
                self.models[name] = _models.Model(
                    name, self.functors[fname], self.datasets[dname],
                    scaling=scaling)
            except ValueError as exc:
                _fail(path, str(exc))

    # -- use -----------------------------------------------------------------

    def pool(self) -> list:
        """All declared parameters in document order."""
        return list(self.parameters.values())

    def parameter_by_uid(self, uid):
        for p in self.parameters.values():
            if p.uid == uid:
                return p
        return None

    def fit_models(self) -> list:
        names = self.fit_spec.get("models")
        if names in (None, "all"):
            names = list(self.models)
        missing = [n for n in names if n not in self.models]
        if missing:
            raise ModelFileError("fit.models: unknown model %r" % missing[0])
        return [self.models[n] for n in names]

    def fit_target(self):
        chosen = self.fit_models()
        if not chosen:
            raise ModelFileError("fit.models: no models declared")
        if len(chosen) == 1:
            return chosen[0]
        return _models.MultiModel(chosen)

    def optimizer(self, override=None, seed=None):
        """(method, options) resolved from the fit section and overrides."""
        method = override or self.fit_spec.get("optimizer", "lm")
        if method not in ("lm", "de"):
            raise ModelFileError("fit.optimizer: expected 'lm' or 'de'")
        raw = dict(self.fit_spec.get("options", {}))
        if seed is not None and method == "de":
            raw["seed"] = seed
        cls = _fit.LMOptions if method == "lm" else _fit.DEOptions
        allowed = set(cls.__dataclass_fields__)
        unknown = [k for k in raw if k not in allowed]
        if unknown:
            raise ModelFileError("fit.options: unknown option %r for %s"
                                 % (unknown[0], method))
        try:
            return method, cls(**raw)
        except (TypeError, ValueError) as exc:
            raise ModelFileError("fit.options: %s" % exc)

    def to_doc(self) -> dict:
        """The original document with parameter state written back."""
        doc = copy.deepcopy(self.doc)
        section = doc.setdefault("parameters", {})
        for name, p in self.parameters.items():
            entry = section.get(name)
            if not isinstance(entry, dict):
                entry = {}
                section[name] = entry
            entry["value"] = p.raw_value
            entry["fixed"] = p.fixed
            if p.scale != 1.0:
                entry["scale"] = p.scale
            if p.bounds is not None:
                entry["bounds"] = list(p.bounds)
            if p.error is not None:
                entry["error"] = p.error
            elif "error" in entry:
                del entry["error"]
        return doc

    @classmethod
    def load(cls, path) -> "Workspace":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ModelFileError("cannot read %s: %s" % (path, exc))
        except json.JSONDecodeError as exc:
            raise ModelFileError("%s is not valid JSON: %s" % (path, exc))
        return cls(doc, base_dir=os.path.dirname(os.path.abspath(path)))


# -- evaluation grids --------------------------------------------------------

def _parse_range(text, path):
    parts = text.split(":")
    try:
        numbers = [float(p) for p in parts]
    except ValueError:
        raise GridError("%s: %r is not numeric" % (path, text))
    if len(numbers) == 1:
        return numbers[0]
    if len(numbers) != 3:
        raise GridError("%s: expected start:stop:step, got %r" % (path, text))
    start, stop, step = numbers
    if step == 0 or (stop - start) * step < 0:
        raise GridError("%s: empty range %r" % (path, text))
    values = np.arange(start, stop, step)
    if values.size == 0:
        raise GridError("%s: empty range %r" % (path, text))
    return values


def parse_grid(spec: str):
    """Parse a grid string into named coordinate axes.

    Forms: ``start:stop:step`` for a single anonymous axis, or
    comma-separated ``name=value`` / ``name=start:stop:step`` parts.
    Ranged axes become the dimensions of an outer-product grid (in the
    order given); plain values are held constant.  Returns
    ``(axes, shape, ranged)`` where ``axes`` maps each name (or ``None``)
    to a flat coordinate array of identical length and ``ranged`` lists
    the names whose lengths make up ``shape``.
    """
    spec = spec.strip()
    if not spec:
        raise GridError("empty grid specification")
    entries = []
    for part in spec.split(","):
        part = part.strip()
        if "=" in part:
            name, _, rhs = part.partition("=")
            name = name.strip()
            if not name:
                raise GridError("missing axis name in %r" % part)
            if any(n == name for n, _ in entries):
                raise GridError("axis %r given twice" % name)
            entries.append((name, _parse_range(rhs.strip(), name)))
        else:
            if len(spec.split(",")) > 1:
                raise GridError("unnamed axes cannot be combined: %r" % part)
            entries.append((None, _parse_range(part, "grid")))
    ranged = [(n, v) for n, v in entries if isinstance(v, np.ndarray)]
    if not ranged:
        raise GridError("at least one axis must be a range")
    shape = tuple(len(v) for _, v in ranged)
    meshes = np.meshgrid(*[v for _, v in ranged], indexing="ij")
    axes = {}
    for (name, _), mesh in zip(ranged, meshes):
        axes[name] = mesh.ravel()
    total = meshes[0].size
    for name, value in entries:
        if not isinstance(value, np.ndarray):
            axes[name] = np.full(total, value)
    return axes, shape, [n for n, _ in ranged]
