"""Integral functors built on Gauss-Legendre quadrature.

Three graph nodes wrap an inner functor without touching it:

* :func:`integrate_variable` integrates one free variable out over fixed
  bounds, lowering the arity by one.
* :func:`average_parameter` averages the functor over a gaussian
  distribution of one parameter's effective value.  The distribution is
  truncated at ``span_sigmas`` and renormalized over the window, so
  averaging a constant returns it exactly.
* :func:`convolve_variable` smears the functor along one coordinate with a
  gaussian resolution kernel whose width may itself vary with that
  coordinate.

Widths are given as full width at half maximum everywhere.  The adaptive
method bisects recursively, comparing an order-n with an order-2n estimate
per subinterval; exhausting ``max_depth`` still returns the best estimate
but emits a :class:`ConvergenceWarning`.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .expr import Expression, Parameter, Variable, _wrap

__all__ = [
    "IntegrationSpec",
    "ConvergenceWarning",
    "gauss_legendre",
    "integrate_variable",
    "average_parameter",
    "convolve_variable",
    "FWHM_TO_SIGMA",
]

# FWHM = 2*sqrt(2*ln 2) * sigma for a gaussian
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class ConvergenceWarning(UserWarning):
    """Adaptive subdivision hit max_depth before meeting tolerances."""


@dataclass
class IntegrationSpec:
    """How an integral functor evaluates its quadrature."""

    method: str = "adaptive"
    order: int = 10
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_depth: int = 20

    def __post_init__(self):
        if self.method not in ("fixed", "adaptive"):
            raise ValueError("method must be 'fixed' or 'adaptive'")
        if self.order < 2:
            raise ValueError("order must be at least 2")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")


@functools.lru_cache(maxsize=None)
def gauss_legendre(order: int):
    """Nodes and weights on [-1, 1], computed once per order and cached."""
    if order < 1:
        raise ValueError("order must be positive")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _fixed_rule(fn, a, b, order):
    nodes, weights = gauss_legendre(order)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    total = None
    for t, w in zip(nodes, weights):
        term = (w * half) * np.asarray(fn(mid + half * t))
        total = term if total is None else total + term
    return total


def _integrate(fn, a, b, spec):
    """Integrate a scalar- or vector-valued fn over [a, b] per spec."""
    a = float(a)
    b = float(b)
    if a == b:
        return 0.0 * np.asarray(fn(a))
    if spec.method == "fixed":
        return _fixed_rule(fn, a, b, spec.order)

    exhausted = [False]

    def recurse(lo, hi, depth):
        coarse = _fixed_rule(fn, lo, hi, spec.order)
        fine = _fixed_rule(fn, lo, hi, 2 * spec.order)
        err = np.abs(fine - coarse)
        tol = np.maximum(spec.abs_tol, spec.rel_tol * np.abs(fine))
        if np.all(err <= tol):
            return fine
        if depth >= spec.max_depth:
            exhausted[0] = True
            return fine
        mid = 0.5 * (lo + hi)
        return recurse(lo, mid, depth + 1) + recurse(mid, hi, depth + 1)

    result = recurse(a, b, 0)
    if exhausted[0]:
        warnings.warn(
            "quadrature did not converge within max_depth=%d; returning the "
            "deepest estimate" % spec.max_depth,
            ConvergenceWarning,
            stacklevel=3,
        )
    return result


def _require_closed(expr, label):
    if expr.variables():
        raise ValueError("%s must not contain free variables" % label)
    return expr


class IntegralOverVariable(Expression):
    """Definite integral of a functor over one of its variables."""

    def __init__(self, body, variable, lower, upper, spec=None, name=""):
        if not isinstance(variable, Variable):
            raise TypeError("integration target must be a Variable")
        lower = _wrap(lower)
        upper = _wrap(upper)
        if lower is None or upper is None:
            raise TypeError("bounds must be expressions or numbers")
        self.name = name
        self.variable = variable
        self.spec = spec or IntegrationSpec()
        self._children = (
            body,
            _require_closed(lower, "lower bound"),
            _require_closed(upper, "upper bound"),
        )

    def _collect(self, params, variables, seen):
        inner_params: list = []
        inner_vars: list = []
        self._children[0]._collect(inner_params, inner_vars, set())
        for p in inner_params:
            if id(p) not in seen:
                seen.add(id(p))
                params.append(p)
        for v in inner_vars:
            if v is not self.variable and id(v) not in seen:
                seen.add(id(v))
                variables.append(v)
        self._children[1]._collect(params, variables, seen)
        self._children[2]._collect(params, variables, seen)

    def _eval(self, ctx):
        a = self._children[1]._eval(ctx)
        b = self._children[2]._eval(ctx)
        body = self._children[0]
        key = id(self.variable)

        def integrand(t):
            return body._eval(ctx.child(var_values={key: t}))

        return _integrate(integrand, a, b, self.spec)


class AveragedParameter(Expression):
    """Functor averaged over a gaussian spread of one parameter.

    The substitution of the distributed value is local to each evaluation;
    the shared parameter node itself is never mutated.
    """

    def __init__(self, body, parameter, fwhm, distribution="gaussian",
                 spec=None, span_sigmas=3.0, name=""):
        if distribution != "gaussian":
            raise ValueError("only the gaussian distribution is supported")
        if not isinstance(parameter, Parameter):
            raise TypeError("averaging target must be a Parameter")
        if not any(p is parameter for p in body.parameters()):
            raise ValueError(
                "parameter %r is not reachable from the functor" % parameter.name)
        fwhm = _wrap(fwhm)
        if fwhm is None:
            raise TypeError("fwhm must be an expression or number")
        if span_sigmas <= 0:
            raise ValueError("span_sigmas must be positive")
        self.name = name
        self.parameter = parameter
        self.spec = spec or IntegrationSpec()
        self.span_sigmas = float(span_sigmas)
        self._children = (body, _require_closed(fwhm, "fwhm"))

    def _eval(self, ctx):
        center = ctx.param_overrides.get(id(self.parameter))
        if center is None:
            center = self.parameter.value
        width = float(self._children[1]._eval(ctx))
        if width <= 0:
            raise ValueError("distribution fwhm must be positive")
        sigma = width * FWHM_TO_SIGMA
        body = self._children[0]
        key = id(self.parameter)
        inv_two_sigma2 = 0.5 / (sigma * sigma)

        def integrand(t):
            weight = math.exp(-((t - center) ** 2) * inv_two_sigma2)
            value = np.atleast_1d(np.asarray(body._eval(
                ctx.child(param_overrides={key: t}))))
            return np.concatenate([value * weight, [weight]])

        stacked = _integrate(integrand, center - self.span_sigmas * sigma,
                             center + self.span_sigmas * sigma, self.spec)
        value = stacked[:-1] / stacked[-1].real
        if value.shape == (1,):
            return value[0]
        return value


class SmearedVariable(Expression):
    """Functor convolved along one coordinate with a gaussian kernel.

    The kernel width is itself a functor of the smeared coordinate, so
    instrument resolution that varies across the scan is expressed
    naturally.  Integration runs in kernel-standard-deviation units, which
    keeps the pointwise normalization exact for any width profile.
    """

    def __init__(self, body, variable, fwhm, spec=None, span_sigmas=3.0,
                 name=""):
        if not isinstance(variable, Variable):
            raise TypeError("smearing target must be a Variable")
        fwhm = _wrap(fwhm)
        if fwhm is None:
            raise TypeError("fwhm must be an expression or number")
        extra = [v for v in fwhm.variables() if v is not variable]
        if extra:
            raise ValueError(
                "kernel width may depend only on the smeared coordinate; "
                "found %s" % [v.name for v in extra])
        if span_sigmas <= 0:
            raise ValueError("span_sigmas must be positive")
        self.name = name
        self.variable = variable
        self.spec = spec or IntegrationSpec()
        self.span_sigmas = float(span_sigmas)
        self._children = (body, fwhm)

    def _eval(self, ctx):
        key = id(self.variable)
        try:
            v0 = ctx.var_values[key]
        except KeyError:
            raise ValueError(
                "variable %r has no bound coordinates" % self.variable.name)
        width = np.asarray(self._children[1]._eval(ctx), dtype=float)
        if np.any(width <= 0):
            raise ValueError("resolution fwhm must be positive everywhere")
        sigma = width * FWHM_TO_SIGMA
        body = self._children[0]

        def integrand(s):
            weight = math.exp(-0.5 * s * s)
            value = np.atleast_1d(np.asarray(body._eval(
                ctx.child(var_values={key: v0 + sigma * s}))))
            return np.concatenate([value * weight, [weight]])

        stacked = _integrate(integrand, -self.span_sigmas, self.span_sigmas,
                             self.spec)
        value = stacked[:-1] / stacked[-1].real
        if value.shape == (1,) and np.ndim(v0) == 0:
            return value[0]
        return value


def integrate_variable(f, variable, lower, upper, spec=None, name=""):
    """Integrate ``f`` over ``variable`` between closed-form bounds."""
    return IntegralOverVariable(f, variable, lower, upper, spec=spec, name=name)


def average_parameter(f, parameter, fwhm, distribution="gaussian", spec=None,
                      span_sigmas=3.0, name=""):
    """Average ``f`` over a gaussian spread of one parameter.

    Parameters
    ----------
    f : Expression
        Functor to average; must reach ``parameter``.
    parameter : Parameter
        The distributed quantity.  Its current effective value is the
        distribution mean.
    fwhm : Expression or float
        Full width at half maximum of the gaussian, in effective-value
        units.  May depend on parameters but not on variables.
    distribution : str
        Only ``"gaussian"`` is available.
    spec : IntegrationSpec, optional
    span_sigmas : float
        Half-width of the truncation window in standard deviations.
    """
    return AveragedParameter(f, parameter, fwhm, distribution=distribution,
                             spec=spec, span_sigmas=span_sigmas, name=name)


def convolve_variable(f, variable, fwhm, spec=None, span_sigmas=3.0, name=""):
    """Smear ``f`` along ``variable`` with a gaussian resolution kernel."""
    return SmearedVariable(f, variable, fwhm, spec=spec,
                           span_sigmas=span_sigmas, name=name)
