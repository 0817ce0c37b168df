"""Optimizers and fit orchestration.

Two minimizers drive the raw sum of squared residuals S:

* damped least squares (Levenberg-Marquardt with Marquardt diagonal
  scaling), with a forward-difference Jacobian taken on raw parameter
  values and bound handling by projection;
* differential evolution (rand/1/bin), with reflection into the bounds
  box, optional polishing of accepted candidates, and an optional final
  polish, both via the damped least-squares core.

Both work on the vector of raw values of the free parameters in the
target's pool.  Reported ``chi2`` values are S/(n_active - n_parameters).
:class:`FitController` runs either optimizer on a worker thread, streams
progress events, and supports interruption between iterations; it is the
single writer into the parameter pool while running.
"""

from __future__ import annotations

import datetime
import threading
import time
from dataclasses import dataclass, field
from queue import SimpleQueue
from typing import Callable, Optional

import numpy as np

from .expr import Parameter
from .models import Model, MultiModel, NonFiniteModelError

__all__ = [
    "LMOptions", "DEOptions", "FitResult", "FitError",
    "fit_lm", "fit_de", "estimate_errors", "FitController",
    "save_snapshot", "load_snapshot",
]

_SQRT_EPS = float(np.sqrt(np.finfo(float).eps))
_LAMBDA_MAX = 1e15


class FitError(RuntimeError):
    """The optimizer could not start or finish (bad initial point etc.)."""


@dataclass
class LMOptions:
    max_iter: int = 200
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    lambda_init: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0


@dataclass
class DEOptions:
    population_size: int = 40
    mutation: float = 0.8      # differential weight F
    crossover: float = 0.9     # crossover probability Cr
    max_generations: int = 200
    candidate_polish_iters: int = 0
    final_polish_iters: int = 0
    seed: Optional[int] = None


@dataclass
class FitResult:
    parameters: list
    values: np.ndarray
    chi2: float
    chi2_history: list
    status: str                # converged | max-iter | interrupted | failed
    n_evaluations: int
    errors: Optional[dict] = None
    message: str = ""


# -- residual plumbing -------------------------------------------------------

def _pool_of(target, free_only=True):
    if isinstance(target, (Model, MultiModel)):
        if free_only:
            return target.free_parameters()
        if isinstance(target, Model):
            return target.functor.parameters()
        seen, out = set(), []
        for m in target.models:
            for p in m.functor.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out
    params = list(target)
    for p in params:
        if not isinstance(p, Parameter):
            raise TypeError("expected Model, MultiModel, or parameters")
    return [p for p in params if not (free_only and p.fixed)] if free_only else params


class _Objective:
    """Adapter from a Model target to a raw-vector residual function."""

    def __init__(self, target, scaled=True):
        self.target = target
        self.params = _pool_of(target, free_only=True)
        if not self.params:
            raise ValueError("no free parameters to fit")
        self.scaled = scaled
        self.n_evaluations = 0

    def x0(self):
        return np.array([p.raw_value for p in self.params], dtype=float)

    def bounds(self):
        lo = np.array([p.bounds[0] if p.bounds else -np.inf for p in self.params])
        hi = np.array([p.bounds[1] if p.bounds else np.inf for p in self.params])
        return lo, hi

    def apply(self, x):
        for p, v in zip(self.params, x):
            p.raw_value = v

    def residuals(self, x):
        """Residual vector at x, or None when the model is non-finite there."""
        self.n_evaluations += 1
        self.apply(x)
        try:
            return self.target.residuals(scaled=self.scaled)
        except NonFiniteModelError:
            return None

    def dof(self):
        dof = self.target.n_active - len(self.params)
        if dof <= 0:
            raise ValueError("%d active points cannot constrain %d parameters"
                             % (self.target.n_active, len(self.params)))
        return dof


def _jacobian(res_fn, x, r, lo, hi):
    """Forward-difference Jacobian of the residual vector on raw values."""
    n = len(x)
    J = np.zeros((len(r), n))
    for j in range(n):
        h = _SQRT_EPS * max(abs(x[j]), 1.0)
        if x[j] + h > hi[j]:
            h = -h
        xt = x.copy()
        xt[j] = min(max(x[j] + h, lo[j]), hi[j])
        step = xt[j] - x[j]
        if step == 0.0:
            continue
        rt = res_fn(xt)
        if rt is None:
            xt[j] = min(max(x[j] - h, lo[j]), hi[j])
            step = xt[j] - x[j]
            if step == 0.0:
                continue
            rt = res_fn(xt)
        if rt is not None:
            J[:, j] = (rt - r) / step
    return J


def _lm_core(res_fn, x0, lo, hi, opts, callback=None, should_stop=None):
    """Damped least squares on a residual function.

    Returns (x, cost_history, status, message).  cost_history holds the raw
    sum of squares at the start and after every accepted step, so it is
    strictly non-increasing.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    r = res_fn(x)
    if r is None or not np.all(np.isfinite(r)):
        raise FitError("non-finite residuals at the initial point")
    cost = float(np.dot(r, r))
    history = [cost]
    lam = opts.lambda_init
    status = "max-iter"
    message = ""
    for iteration in range(1, opts.max_iter + 1):
        if should_stop is not None and should_stop():
            status = "interrupted"
            break
        J = _jacobian(res_fn, x, r, lo, hi)
        g = J.T @ r
        if np.max(np.abs(g)) < opts.gradient_tol:
            status = "converged"
            message = "gradient below tolerance"
            break
        JtJ = J.T @ J
        diag = np.diag(JtJ).copy()
        floor = max(diag.max(), 1e-30)
        damp = np.where(diag > 1e-14 * floor, diag, 1e-14 * floor)
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                step = np.linalg.solve(JtJ + np.diag(lam * damp), -g)
            except np.linalg.LinAlgError:
                lam *= opts.lambda_up
                continue
            xt = np.clip(x + step, lo, hi)
            rt = res_fn(xt)
            if rt is not None and np.all(np.isfinite(rt)):
                ct = float(np.dot(rt, rt))
                if ct < cost:
                    moved = np.linalg.norm(xt - x)
                    x, r, cost = xt, rt, ct
                    history.append(cost)
                    lam = max(lam / opts.lambda_down, 1e-12)
                    accepted = True
                    if callback is not None:
                        callback(iteration, cost, x.copy())
                    if moved < opts.step_tol * (np.linalg.norm(x) + opts.step_tol):
                        status = "converged"
                        message = "step below tolerance"
                    break
            lam *= opts.lambda_up
        if not accepted:
            status = "converged"
            message = "no descending step found (damping exhausted)"
            break
        if status == "converged":
            break
    res_fn(x)  # leave the pool at the accepted optimum
    return x, history, status, message


def _reflect_into_box(x, lo, hi):
    x = x.copy()
    for _ in range(100):
        over = x > hi
        under = x < lo
        if not (over.any() or under.any()):
            return x
        x = np.where(over, 2.0 * hi - x, x)
        x = np.where(under, 2.0 * lo - x, x)
    return np.clip(x, lo, hi)


def _de_core(res_fn, x0, lo, hi, opts, callback=None, should_stop=None):
    """Differential evolution, rand/1/bin with immediate replacement."""
    n = len(x0)
    np_size = opts.population_size
    if np_size < 4:
        raise ValueError("population_size must be at least 4")
    if opts.mutation <= 0:
        raise ValueError("mutation factor must be positive")
    if not 0.0 <= opts.crossover <= 1.0:
        raise ValueError("crossover probability must be within [0, 1]")
    rng = np.random.default_rng(opts.seed)

    def cost(x):
        r = res_fn(x)
        if r is None or not np.all(np.isfinite(r)):
            return np.inf
        return float(np.dot(r, r))

    pop = np.empty((np_size, n))
    pop[0] = np.clip(np.asarray(x0, dtype=float), lo, hi)
    pop[1:] = rng.uniform(lo, hi, size=(np_size - 1, n))
    costs = np.array([cost(p) for p in pop])
    history = [float(costs.min())]
    status = "max-iter"
    interrupted = False
    for generation in range(1, opts.max_generations + 1):
        for i in range(np_size):
            if should_stop is not None and should_stop():
                interrupted = True
                break
            others = [i]
            while len(others) < 4:
                k = int(rng.integers(np_size))
                if k not in others:
                    others.append(k)
            a, b, c = others[1:]
            mutant = pop[a] + opts.mutation * (pop[b] - pop[c])
            mutant = _reflect_into_box(mutant, lo, hi)
            cross = rng.random(n) < opts.crossover
            cross[int(rng.integers(n))] = True
            trial = np.where(cross, mutant, pop[i])
            ct = cost(trial)
            if ct <= costs[i]:
                if opts.candidate_polish_iters > 0 and np.isfinite(ct):
                    lm_opts = LMOptions(max_iter=opts.candidate_polish_iters)
                    xt, hist, _, _ = _lm_core(res_fn, trial, lo, hi, lm_opts)
                    if hist[-1] < ct:
                        trial, ct = xt, hist[-1]
                pop[i] = trial
                costs[i] = ct
        best = float(costs.min())
        history.append(best)
        if callback is not None:
            callback(generation, best, pop[int(costs.argmin())].copy())
        if interrupted:
            status = "interrupted"
            break
    x = pop[int(costs.argmin())].copy()
    if not interrupted and opts.final_polish_iters > 0 and np.isfinite(costs.min()):
        lm_opts = LMOptions(max_iter=opts.final_polish_iters)
        xp, hist, _, _ = _lm_core(res_fn, x, lo, hi, lm_opts)
        if hist[-1] < history[-1]:
            x = xp
            history.append(hist[-1])
    if status != "interrupted":
        spread = float(costs.max() - costs.min())
        if np.isfinite(spread) and spread <= 1e-10 * max(1.0, abs(history[-1])):
            status = "converged"
    res_fn(x)
    return x, history, status, ""


# -- public entry points -----------------------------------------------------

def fit_lm(target, options=None, callback=None, should_stop=None) -> FitResult:
    """Refine the target's free parameters by damped least squares.

    ``callback(iteration, chi2, raw_values)`` fires after every accepted
    step; ``should_stop()`` is polled once per iteration and flips the
    status to ``interrupted``.
    """
    opts = options or LMOptions()
    obj = _Objective(target)
    dof = obj.dof()
    lo, hi = obj.bounds()

    def cb(iteration, cost, x):
        obj.apply(x)
        if callback is not None:
            callback(iteration, cost / dof, x)

    x, history, status, message = _lm_core(
        obj.residuals, obj.x0(), lo, hi, opts, callback=cb,
        should_stop=should_stop)
    obj.apply(x)
    return FitResult(
        parameters=obj.params,
        values=x,
        chi2=history[-1] / dof,
        chi2_history=[c / dof for c in history],
        status=status,
        n_evaluations=obj.n_evaluations,
        message=message,
    )


def fit_de(target, options=None, callback=None, should_stop=None) -> FitResult:
    """Global search by differential evolution (rand/1/bin).

    Every free parameter must carry finite bounds; the population is drawn
    uniformly from the bounds box with the current point as member zero.
    A fixed ``seed`` makes the whole run deterministic.
    """
    opts = options or DEOptions()
    obj = _Objective(target)
    dof = obj.dof()
    for p in obj.params:
        if p.bounds is None or not all(np.isfinite(p.bounds)):
            raise ValueError(
                "differential evolution requires finite bounds on "
                "parameter %r" % p.name)
    lo, hi = obj.bounds()

    def cb(generation, cost, x):
        obj.apply(x)
        if callback is not None:
            callback(generation, cost / dof, x)

    x, history, status, message = _de_core(
        obj.residuals, obj.x0(), lo, hi, opts, callback=cb,
        should_stop=should_stop)
    obj.apply(x)
    return FitResult(
        parameters=obj.params,
        values=x,
        chi2=history[-1] / dof,
        chi2_history=[c / dof for c in history],
        status=status,
        n_evaluations=obj.n_evaluations,
        message=message,
    )


def estimate_errors(target) -> dict:
    """One-sigma parameter uncertainties from the local curvature.

    Builds the Jacobian of the plain linear residuals at the current
    values, inverts J^T J, and scales by the reduced chi-square; the square
    roots of the diagonal land on each parameter's ``error`` field (in
    raw-value units).  Parameters the model does not respond to, or that
    are degenerate with others, get ``None`` instead of a number.
    """
    obj = _Objective(target, scaled=False)
    dof = obj.dof()
    lo, hi = obj.bounds()
    x = obj.x0()
    r = obj.residuals(x)
    if r is None:
        raise FitError("non-finite residuals at the current point")
    J = _jacobian(obj.residuals, x, r, lo, hi)
    obj.apply(x)
    chi2_red = float(np.dot(r, r)) / dof
    col = np.sqrt(np.sum(J * J, axis=0))
    identifiable = col > 1e-12 * max(col.max(), 1.0)
    sigmas: dict = {}
    for p in obj.params:
        p.error = None
    if identifiable.any():
        sub = (J[:, identifiable].T @ J[:, identifiable])
        try:
            cov = chi2_red * np.linalg.inv(sub)
            diag = np.diag(cov)
            if np.any(diag < 0):
                raise np.linalg.LinAlgError
            values = iter(np.sqrt(diag))
            for p, ok in zip(obj.params, identifiable):
                if ok:
                    p.error = float(next(values))
        except np.linalg.LinAlgError:
            pass
    for p in obj.params:
        sigmas[p.uid] = p.error
    return sigmas


# -- snapshots ---------------------------------------------------------------

def save_snapshot(target, chi2=None, status=None) -> dict:
    """Serializable snapshot of every parameter reachable from the target."""
    params = _pool_of(target, free_only=False)
    return {
        "saved_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "chi2": chi2,
        "status": status,
        "parameters": [p.to_record() for p in params],
    }


def load_snapshot(target, doc) -> None:
    """Restore parameter state from a snapshot; matches records by id."""
    params = {p.uid: p for p in _pool_of(target, free_only=False)}
    records = doc.get("parameters")
    if records is None:
        raise ValueError("snapshot has no 'parameters' list")
    missing = [rec.get("id") for rec in records if rec.get("id") not in params]
    if missing:
        raise ValueError("snapshot names unknown parameter ids: %s"
                         % ", ".join(map(str, missing)))
    for rec in records:
        params[rec["id"]].update_from_record(rec)


# -- asynchronous orchestration ---------------------------------------------

_active_lock = threading.Lock()
_active_param_ids: set = set()


def _register_pool(params):
    ids = {id(p) for p in params}
    with _active_lock:
        if ids & _active_param_ids:
            raise FitError("a fit is already running on shared parameters")
        _active_param_ids.update(ids)
    return ids


def _unregister_pool(ids):
    with _active_lock:
        _active_param_ids.difference_update(ids)


class FitController:
    """Run one fit on a worker thread with progress events and interrupt.

    Subscribers receive dict events on their own queue:
    ``{"type": "progress", "iteration", "chi2", "elapsed", "params"}`` per
    accepted iteration (or generation), then exactly one terminal
    ``{"type": "done", "status", "chi2"}``.  Two controllers whose pools
    share any parameter cannot run at once.
    """

    def __init__(self, target, optimizer="lm", options=None,
                 compute_errors=False):
        if optimizer not in ("lm", "de"):
            raise ValueError("optimizer must be 'lm' or 'de'")
        self.target = target
        self.optimizer = optimizer
        self.options = options
        self.compute_errors = compute_errors
        self._thread = None
        self._stop = threading.Event()
        self._result: Optional[FitResult] = None
        self._subscribers: list = []
        self._sub_lock = threading.Lock()
        self._pool_ids = None
        self._t0 = None
        self._last_progress = None
        self._terminal = None

    # -- events ----------------------------------------------------------

    def subscribe(self) -> SimpleQueue:
        """Attach a listener queue.

        The latest progress event (and the terminal event, once the fit is
        over) is replayed immediately, so a subscriber that attaches mid-fit
        starts from the current best point instead of waiting for the next
        iteration -- which may never come if the fit is about to finish.
        """
        q: SimpleQueue = SimpleQueue()
        with self._sub_lock:
            self._subscribers.append(q)
            if self._last_progress is not None:
                q.put(self._last_progress)
            if self._terminal is not None:
                q.put(self._terminal)
        return q

    def unsubscribe(self, q) -> None:
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _emit(self, event) -> None:
        with self._sub_lock:
            if event.get("type") == "progress":
                self._last_progress = event
            else:
                self._terminal = event
            for q in self._subscribers:
                q.put(event)

    # -- lifecycle --------------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            raise FitError("controller already started")
        params = _pool_of(self.target, free_only=True)
        if not params:
            raise ValueError("no free parameters to fit")
        self._pool_ids = _register_pool(params)
        self._t0 = time.monotonic()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def _run(self) -> None:
        snapshot_params = _pool_of(self.target, free_only=True)

        def callback(iteration, chi2, x):
            self._emit({
                "type": "progress",
                "iteration": int(iteration),
                "chi2": float(chi2),
                "elapsed": time.monotonic() - self._t0,
                "params": {p.uid: float(v) for p, v in zip(snapshot_params, x)},
            })

        try:
            runner = fit_lm if self.optimizer == "lm" else fit_de
            result = runner(self.target, options=self.options,
                            callback=callback, should_stop=self._stop.is_set)
            if self.compute_errors and isinstance(self.target,
                                                 (Model, MultiModel)):
                try:
                    result.errors = estimate_errors(self.target)
                except Exception:
                    result.errors = None
            self._result = result
            terminal = {"type": "done", "status": result.status,
                        "chi2": result.chi2,
                        "iterations": len(result.chi2_history) - 1}
            if result.errors is not None:
                terminal["errors"] = dict(result.errors)
            self._emit(terminal)
        except Exception as exc:  # surface optimizer failures to listeners
            self._result = FitResult(
                parameters=snapshot_params,
                values=np.array([p.raw_value for p in snapshot_params]),
                chi2=float("nan"), chi2_history=[], status="failed",
                n_evaluations=0, message=str(exc))
            self._emit({"type": "done", "status": "failed", "error": str(exc)})
        finally:
            _unregister_pool(self._pool_ids)

    def interrupt(self) -> None:
        self._stop.set()

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def result(self, timeout=None) -> Optional[FitResult]:
        if self._thread is None:
            raise FitError("controller not started")
        self._thread.join(timeout)
        if self._thread.is_alive():
            return None
        return self._result
