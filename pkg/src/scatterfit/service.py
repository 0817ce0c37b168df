"""HTTP + server-sent-events API around one loaded model workspace.

One process serves one session.  All parameter writes go through
PATCH /api/params or PUT /api/params/snapshot and are rejected with 409
while a fit is running; every successful write bumps the session revision,
and curve responses carry the revision they were computed at so clients
can discard stale results.
"""

from __future__ import annotations

import json
import queue
import threading
import time

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from . import fit as _fit
from . import reflectivity as _refl
from .modelfile import GridError, ModelFileError, Workspace, parse_grid
from .models import NonFiniteModelError

__all__ = ["Session", "create_app"]

# progress events are coalesced so subscribers see at most this many per
# second, always keeping the latest iteration
MAX_EVENT_RATE = 20.0


class Session:
    """Mutable state shared by the endpoints: workspace, revision, fit."""

    def __init__(self, workspace: Workspace):
        self.workspace = workspace
        self.revision = 0
        self.lock = threading.Lock()
        self.controller = None
        self.fit_count = 0
        self.last_fit_status = None
        self._monitor = None

    # -- fit orchestration ---------------------------------------------------

    def fit_running(self) -> bool:
        return self.controller is not None and self.controller.running

    def start_fit(self, optimizer=None, options=None):
        target = self.workspace.fit_target()
        method, opts = self.workspace.optimizer(override=optimizer)
        if options:
            merged = dict(self.workspace.fit_spec.get("options", {}))
            merged.update(options)
            cls = _fit.LMOptions if method == "lm" else _fit.DEOptions
            allowed = set(cls.__dataclass_fields__)
            unknown = [k for k in merged if k not in allowed]
            if unknown:
                raise ModelFileError("unknown option %r for %s"
                                     % (unknown[0], method))
            opts = cls(**merged)
        controller = _fit.FitController(target, optimizer=method,
                                        options=opts, compute_errors=True)
        controller.start()
        self.controller = controller
        self.fit_count += 1
        self.last_fit_status = "running"
        # bump the revision once per applied progress update so clients
        # re-fetch curves while the optimizer steers the pool
        events = controller.subscribe()

        def monitor():
            while True:
                event = events.get()
                with self.lock:
                    self.revision += 1
                if event.get("type") == "done":
                    self.last_fit_status = event.get("status")
                    break

        self._monitor = threading.Thread(target=monitor, daemon=True)
        self._monitor.start()
        return self.fit_count

    def bump(self) -> int:
        with self.lock:
            self.revision += 1
            return self.revision


def _tolist(values):
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def _chi2_or_none(model):
    try:
        return float(model.chi2())
    except Exception:
        return None


def create_app(workspace: Workspace, static_dir=None) -> FastAPI:
    app = FastAPI(title="scatterfit session")
    session = Session(workspace)
    app.state.session = session

    def error(status, message):
        return JSONResponse({"detail": message}, status_code=status)

    @app.get("/api/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/session")
    def session_info():
        ws = session.workspace
        functors = []
        for name, node in ws.functors.items():
            try:
                variables = [v.name for v in node.variables()]
            except ValueError:
                variables = []
            functors.append({
                "name": name,
                "kind": type(node).__name__,
                "arity": len(variables),
                "variables": variables,
            })
        models = []
        for name, model in ws.models.items():
            models.append({
                "name": name,
                "functor": model.functor.name,
                "dataset": model.dataset.name,
                "scaling": model.scaling,
                "chi2": _chi2_or_none(model),
            })
        return {
            "name": ws.name,
            "revision": session.revision,
            "parameters": [dict(p.to_record(), value=p.value)
                           for p in ws.pool()],
            "functors": functors,
            "models": models,
            "datasets": [{"name": d.name, "n": d.n, "ndim": d.ndim,
                          "n_active": d.n_active} for d in
                         ws.datasets.values()],
            "samples": list(ws.samples),
            "fit": {"running": session.fit_running(),
                    "status": session.last_fit_status},
        }

    @app.patch("/api/params")
    async def patch_params(request: Request):
        body = await request.json()
        if not isinstance(body, dict):
            return error(422, "expected an object of id -> updates")
        if session.fit_running():
            return error(409, "a fit is running; parameters are read-only")
        updates = []
        for uid, fields in body.items():
            p = session.workspace.parameter_by_uid(uid)
            if p is None:
                return error(404, "unknown parameter id %r" % uid)
            if not isinstance(fields, dict):
                return error(422, "updates for %r must be an object" % uid)
            unknown = [k for k in fields
                       if k not in ("raw_value", "fixed", "bounds")]
            if unknown:
                return error(422, "unknown field %r for parameter %r"
                             % (unknown[0], uid))
            updates.append((p, fields))
        saved = [(p, p.raw_value, p.bounds, p.fixed) for p, _ in updates]
        try:
            for p, fields in updates:
                record = {"id": p.uid}
                if "raw_value" in fields:
                    record["raw_value"] = float(fields["raw_value"])
                if "bounds" in fields:
                    b = fields["bounds"]
                    record["bounds"] = None if b is None else \
                        (float(b[0]), float(b[1]))
                p.update_from_record(record)
                if "fixed" in fields:
                    p.fixed = bool(fields["fixed"])
        except (TypeError, ValueError, IndexError) as exc:
            for p, raw, bounds, fixed in saved:
                p._raw = raw
                p._bounds = bounds
                p.fixed = fixed
            return error(422, str(exc))
        return {"revision": session.bump()}

    @app.get("/api/curve")
    def curve(functor: str, grid: str):
        ws = session.workspace
        if functor not in ws.functors:
            return error(404, "unknown functor %r" % functor)
        node = ws.functors[functor]
        try:
            axes, shape, _ranged = parse_grid(grid)
        except GridError as exc:
            return error(422, str(exc))
        try:
            variables = node.variables()
        except ValueError as exc:
            return error(422, str(exc))
        if None in axes:
            if len(variables) != 1:
                return error(422, "anonymous grid needs a single-variable "
                                  "functor; name the axes instead")
            axes = {variables[0].name: axes[None]}
        missing = [v.name for v in variables if v.name not in axes]
        if missing:
            return error(422, "grid does not cover variable %r" % missing[0])
        revision = session.revision
        coords = [axes[v.name] for v in variables]
        try:
            if variables:
                values = node(*coords)
            else:
                values = node(next(iter(axes.values())))
        except (NonFiniteModelError, ValueError) as exc:
            return error(422, str(exc))
        payload = {
            "functor": functor,
            "revision": revision,
            "shape": list(shape),
            "variables": [v.name for v in variables],
            "coordinates": {name: _tolist(arr) for name, arr in axes.items()},
        }
        values = np.asarray(values)
        if np.iscomplexobj(values):
            payload["values"] = _tolist(values.real)
            payload["values_im"] = _tolist(values.imag)
        else:
            payload["values"] = _tolist(values)
        return payload

    @app.get("/api/profile")
    def profile(sample: str, zmin: float | None = None,
                zmax: float | None = None, n: int = 500):
        ws = session.workspace
        if sample not in ws.samples:
            return error(404, "unknown sample %r" % sample)
        target = ws.samples[sample]
        if n < 2 or n > 100000:
            return error(422, "n must be between 2 and 100000")
        if zmin is None or zmax is None:
            from .expr import EvalContext
            ctx = EvalContext()
            total = 0.0
            for lay in target.structural_layers(ctx)[:-1]:
                total += float(np.asarray(lay.thickness._eval(ctx)))
            zmin = -0.25 * total - 5.0 if zmin is None else zmin
            zmax = 1.25 * total + 5.0 if zmax is None else zmax
        if not zmax > zmin:
            return error(422, "zmax must exceed zmin")
        z = np.linspace(zmin, zmax, n)
        try:
            payload = {
                "sample": sample,
                "revision": session.revision,
                "z": _tolist(z),
                "re": _tolist(_refl.sld_profile(target, z, "re")),
                "im": _tolist(_refl.sld_profile(target, z, "im")),
                "msld": _tolist(_refl.sld_profile(target, z, "msld")),
            }
        except (NonFiniteModelError, ValueError) as exc:
            return error(422, str(exc))
        return payload

    @app.post("/api/fit")
    async def start_fit(request: Request):
        try:
            body = await request.json()
        except Exception:
            body = {}
        if not isinstance(body, dict):
            return error(422, "expected a JSON object")
        if session.fit_running():
            return error(409, "a fit is already running")
        try:
            fit_id = session.start_fit(optimizer=body.get("optimizer"),
                                       options=body.get("options"))
        except (ModelFileError, ValueError) as exc:
            return error(422, str(exc))
        except _fit.FitError as exc:
            return error(409, str(exc))
        return JSONResponse({"fit_id": fit_id,
                             "revision": session.revision},
                            status_code=202)

    @app.post("/api/fit/interrupt")
    def interrupt():
        if session.controller is None:
            return {"interrupted": False}
        running = session.controller.running
        session.controller.interrupt()
        return {"interrupted": running}

    @app.get("/api/fit/events")
    def events():
        controller = session.controller
        if controller is None:
            return error(404, "no fit has been started")

        def stream():
            q = controller.subscribe()
            min_interval = 1.0 / MAX_EVENT_RATE
            last_sent = 0.0
            pending = None
            try:
                while True:
                    timeout = 0.25
                    now = time.monotonic()
                    if pending is not None:
                        timeout = max(0.0, min_interval - (now - last_sent))
                    try:
                        event = q.get(timeout=timeout if timeout > 0
                                      else 0.001)
                    except queue.Empty:
                        event = None
                    now = time.monotonic()
                    if event is not None and event.get("type") != "progress":
                        if pending is not None:
                            yield "data: %s\n\n" % json.dumps(pending)
                        yield "data: %s\n\n" % json.dumps(event)
                        return
                    if event is not None:
                        pending = event  # keep only the latest iteration
                    if pending is not None and \
                            now - last_sent >= min_interval:
                        yield "data: %s\n\n" % json.dumps(pending)
                        pending = None
                        last_sent = now
            finally:
                controller.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    @app.get("/api/params/snapshot")
    def get_snapshot():
        ws = session.workspace
        chi2 = None
        try:
            chi2 = float(ws.fit_target().chi2())
        except Exception:
            pass
        return _fit.save_snapshot(ws.pool(), chi2=chi2,
                                  status=session.last_fit_status)

    @app.put("/api/params/snapshot")
    async def put_snapshot(request: Request):
        body = await request.json()
        if session.fit_running():
            return error(409, "a fit is running; parameters are read-only")
        if not isinstance(body, dict):
            return error(422, "expected a snapshot document")
        pool = session.workspace.pool()
        saved = [(p, p.raw_value, p.bounds, p.fixed) for p in pool]
        try:
            _fit.load_snapshot(pool, body)
        except (TypeError, ValueError, KeyError) as exc:
            for p, raw, bounds, fixed in saved:
                p._raw = raw
                p._bounds = bounds
                p.fixed = fixed
            return error(422, str(exc))
        return {"revision": session.bump()}

    if static_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")

    return app
