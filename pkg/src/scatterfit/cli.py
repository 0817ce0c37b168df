"""Command line front end: simulate, fit and serve a JSON model file.

Exit codes: 0 success, 1 model-file schema error (the message names the
offending field), 2 evaluation fault (bad grid, non-finite model, broken
data file), 3 fit failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np

from . import fit as _fit
from .modelfile import GridError, ModelFileError, Workspace, parse_grid
from .models import NonFiniteModelError

EXIT_OK = 0
EXIT_SCHEMA = 1
EXIT_EVAL = 2
EXIT_FIT = 3

PORT_ENV_VAR = "SCATTERFIT_PORT"
DEFAULT_PORT = 8750


class _CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_workspace(path) -> Workspace:
    try:
        return Workspace.load(path)
    except ModelFileError as exc:
        raise _CliError(EXIT_SCHEMA, str(exc))


def _with_suffix(path, suffix):
    stem, ext = os.path.splitext(path)
    return "%s_%s%s" % (stem, suffix, ext)


def _write_csv(path, names, columns, values):
    values = np.asarray(values)
    complex_out = np.iscomplexobj(values)
    headers = list(names) + (["value_re", "value_im"] if complex_out
                             else ["value"])
    rows = list(columns)
    if complex_out:
        rows += [values.real, values.imag]
    else:
        rows += [values]
    with open(path, "w") as fh:
        fh.write("# " + ",".join(headers) + "\n")
        for i in range(len(rows[0])):
            fh.write(",".join("%.9g" % float(col[i]) for col in rows) + "\n")


def _grid_for(functor, axes):
    """Coordinate arrays for this functor's variables, or an error."""
    variables = functor.variables()
    if None in axes:
        if len(variables) != 1:
            raise _CliError(
                EXIT_EVAL,
                "anonymous grid ranges suit single-variable functors only; "
                "name the axes (e.g. qx=0:1:0.01)")
        return variables, [axes[None]]
    missing = [v.name for v in variables if v.name not in axes]
    if missing:
        raise _CliError(EXIT_EVAL,
                        "grid does not define variable %r" % missing[0])
    return variables, [axes[v.name] for v in variables]


def cmd_simulate(args) -> int:
    ws = _load_workspace(args.model_file)
    if not ws.functors:
        raise _CliError(EXIT_SCHEMA, "functors: no functors declared")
    if args.coords:
        from .dataset import DataFormatError, load_text
        try:
            ds = load_text(args.coords)
        except (DataFormatError, ValueError) as exc:
            raise _CliError(EXIT_EVAL, str(exc))
        if ds.ndim != 1:
            raise _CliError(EXIT_EVAL, "--coords files must be 1-D")
        axes = {None: ds.coords[0]}
        shape = (ds.n,)
        ranged = [None]
    else:
        try:
            axes, shape, ranged = parse_grid(args.grid)
        except GridError as exc:
            raise _CliError(EXIT_EVAL, str(exc))
    multiple = len(ws.functors) > 1
    written = []
    for name, functor in ws.functors.items():
        try:
            variables, coords = _grid_for(functor, axes)
        except ValueError as exc:
            raise _CliError(EXIT_EVAL, "%s: %s" % (name, exc))
        try:
            if variables:
                values = functor(*coords)
            else:
                values = functor(next(iter(axes.values())))
        except (NonFiniteModelError, ValueError) as exc:
            raise _CliError(EXIT_EVAL, "%s: %s" % (name, exc))
        out = _with_suffix(args.out, name) if multiple else args.out
        if args.format == "csv":
            col_names = [v.name for v in variables] or ["x"]
            cols = coords if variables else [next(iter(axes.values()))]
            _write_csv(out, col_names, cols, values)
        else:
            from . import plotting
            values = np.asarray(values)
            if np.iscomplexobj(values):
                values = np.abs(values)
            if len(shape) == 1:
                x = coords[0] if variables else next(iter(axes.values()))
                plotting.plot_curve(x, values, out,
                                    xlabel=str(ranged[0] or "x"),
                                    ylabel=name, title=ws.name)
            elif len(shape) == 2:
                xs = np.unique(axes[ranged[0]])
                ys = np.unique(axes[ranged[1]])
                plotting.plot_map(xs, ys, values.reshape(shape), out,
                                  xlabel=ranged[0], ylabel=ranged[1],
                                  title=name)
            else:
                raise _CliError(EXIT_EVAL,
                                "png output supports 1-D and 2-D grids")
        written.append(out)
    for path in written:
        print(path)
    return EXIT_OK


def cmd_fit(args) -> int:
    ws = _load_workspace(args.model_file)
    try:
        target = ws.fit_target()
        method, options = ws.optimizer(override=args.optimizer,
                                       seed=args.seed)
    except ModelFileError as exc:
        raise _CliError(EXIT_SCHEMA, str(exc))
    if method == "de":
        for p in target.free_parameters():
            b = p.bounds
            if b is None or not (np.isfinite(b[0]) and np.isfinite(b[1])):
                raise _CliError(
                    EXIT_SCHEMA,
                    "parameters.%s: differential evolution needs finite "
                    "bounds" % p.name)
    runner = _fit.fit_lm if method == "lm" else _fit.fit_de
    try:
        result = runner(target, options=options)
    except (NonFiniteModelError, _fit.FitError, ValueError) as exc:
        raise _CliError(EXIT_FIT, str(exc))
    if result.status == "failed":
        raise _CliError(EXIT_FIT, result.message or "fit failed")
    errors = None
    try:
        errors = _fit.estimate_errors(target)
    except Exception:
        pass
    report = _fit.save_snapshot(ws.pool(), chi2=result.chi2,
                                status=result.status)
    report["optimizer"] = method
    report["chi2_history"] = [float(c) for c in result.chi2_history]
    report["n_evaluations"] = result.n_evaluations
    if args.seed is not None:
        report["seed"] = args.seed
    if errors is not None:
        report["errors"] = errors
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    print("status: %s" % result.status)
    print("chi2: %.9g" % result.chi2)
    for p in target.free_parameters():
        err = " +- %.3g" % (p.error * abs(p.scale)) \
            if p.error is not None else ""
        print("  %s = %.9g%s" % (p.name, p.value, err))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    ws = _load_workspace(args.model_file)
    app = create_app(ws, static_dir=args.static_dir)
    session = app.state.session
    config = uvicorn.Config(app, host=args.host, port=args.port,
                            log_level="warning")
    server = uvicorn.Server(config)
    try:
        server.run()
    except (SystemExit, KeyboardInterrupt):
        # uvicorn re-raises the interrupt after its graceful shutdown
        pass
    # wind down any running fit, then persist
    if session.controller is not None and session.controller.running:
        session.controller.interrupt()
        session.controller.result(timeout=30.0)
    if getattr(server, "started", True) is False:
        raise _CliError(EXIT_SCHEMA, "could not bind %s:%d"
                        % (args.host, args.port))
    if args.out:
        snapshot = _fit.save_snapshot(ws.pool(),
                                      status=session.last_fit_status)
        snapshot["saved_at"] = datetime.datetime.now(
            datetime.timezone.utc).isoformat()
        with open(args.out, "w") as fh:
            json.dump(snapshot, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scatterfit",
        description="Simulate, fit and serve scattering model files.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate",
                         help="evaluate every functor on a grid")
    sim.add_argument("model_file")
    grid_src = sim.add_mutually_exclusive_group(required=True)
    grid_src.add_argument("--grid",
                          help="axis spec, e.g. 'q=0:4:0.001' or "
                               "'qx=0:2:0.01,qy=0,qz=0'")
    grid_src.add_argument("--coords",
                          help="data file supplying the coordinates")
    sim.add_argument("--out", required=True, help="output file; multiple "
                     "functors get the functor name appended")
    sim.add_argument("--format", choices=("csv", "png"), default="csv")
    sim.set_defaults(func=cmd_simulate)

    fit_p = sub.add_parser("fit", help="run the declared fit")
    fit_p.add_argument("model_file")
    fit_p.add_argument("--optimizer", choices=("lm", "de"))
    fit_p.add_argument("--out", help="write the fit report JSON here")
    fit_p.add_argument("--seed", type=int,
                       help="random seed for differential evolution")
    fit_p.set_defaults(func=cmd_fit)

    serve = sub.add_parser("serve", help="serve the interactive session")
    serve.add_argument("model_file")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int,
                       default=int(os.environ.get(PORT_ENV_VAR,
                                                  DEFAULT_PORT)))
    serve.add_argument("--static-dir", help="directory of built UI assets")
    serve.add_argument("--out",
                       help="persist a parameter snapshot here on shutdown")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return exc.code
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
