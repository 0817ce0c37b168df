"""Binding functors to data: residuals, scalings, and chi-square.

A :class:`Model` pairs one functor with one data set and a residual scaling.
The scaling changes what "distance" means during fitting:

========  =============================  =========================
scaling   transformed intensity          transformed uncertainty
========  =============================  =========================
linear    I                              sigma
log       ln I                           sigma / I_measured
q2        q^2 I                          q^2 sigma
q4        q^4 I                          q^4 sigma
========  =============================  =========================

For multi-dimensional data, q is the euclidean norm of the coordinate
tuple.  :class:`MultiModel` concatenates residuals of several models; its
parameter pool lists every independent parameter exactly once, however many
member functors share it.
"""

from __future__ import annotations

import numpy as np

from .expr import Expression

__all__ = ["Model", "MultiModel", "model", "multimodel", "NonFiniteModelError",
           "SCALINGS"]

SCALINGS = ("linear", "log", "q2", "q4")


class NonFiniteModelError(ValueError):
    """The functor produced nan/inf on an active data point."""


def _dedup(params):
    seen = set()
    out = []
    for p in params:
        if id(p) not in seen:
            seen.add(id(p))
            out.append(p)
    return out


class Model:
    """One functor fitted against one data set."""

    def __init__(self, name, functor, dataset, scaling="linear"):
        if scaling not in SCALINGS:
            raise ValueError("unknown scaling %r; pick one of %s"
                             % (scaling, ", ".join(SCALINGS)))
        if not isinstance(functor, Expression):
            raise TypeError("functor must be an expression")
        arity = functor.arity
        if arity and arity != dataset.ndim:
            raise ValueError(
                "functor has %d variable(s) but data has %d coordinate "
                "dimension(s)" % (arity, dataset.ndim))
        self.name = str(name)
        self.functor = functor
        self.dataset = dataset
        self.scaling = scaling

    def free_parameters(self) -> list:
        return self.functor.free_parameters()

    @property
    def n_active(self) -> int:
        return self.dataset.n_active

    def evaluate_active(self) -> np.ndarray:
        coords = self.dataset.active_coords()
        if self.functor.arity == 0:
            return self.functor(coords[0])
        return self.functor(*coords)

    def _q_norm(self) -> np.ndarray:
        coords = self.dataset.active_coords()
        if len(coords) == 1:
            return np.abs(coords[0])
        return np.sqrt(sum(c * c for c in coords))

    def residuals(self, scaled=True) -> np.ndarray:
        """Weighted residuals (I_measured - I_model)/sigma after scaling.

        With ``scaled=False`` the linear transform is used regardless of the
        model's scaling; error estimation relies on that.
        """
        if self.n_active == 0:
            raise ValueError("model %r has no active data points" % self.name)
        measured = self.dataset.active_intensity()
        sigma = self.dataset.active_sigma()
        computed = np.asarray(self.evaluate_active())
        if np.iscomplexobj(computed):
            raise NonFiniteModelError(
                "model %r: functor returned complex values; fit |.| or re/im"
                % self.name)
        scaling = self.scaling if scaled else "linear"
        if scaling == "log":
            if np.any(measured <= 0):
                raise ValueError(
                    "model %r: log scaling needs positive measured "
                    "intensities on active points" % self.name)
            t_measured = np.log(measured)
            with np.errstate(all="ignore"):
                t_computed = np.log(computed)
            t_sigma = sigma / measured
        elif scaling in ("q2", "q4"):
            w = self._q_norm() ** (2 if scaling == "q2" else 4)
            t_measured = w * measured
            t_computed = w * computed
            t_sigma = w * sigma
            if np.any(t_sigma == 0):
                raise ValueError(
                    "model %r: %s scaling gives zero uncertainty at q=0; "
                    "mask those points" % (self.name, scaling))
        else:
            t_measured = measured
            t_computed = computed
            t_sigma = sigma
        r = (t_measured - t_computed) / t_sigma
        if not np.all(np.isfinite(r)):
            raise NonFiniteModelError(
                "model %r: non-finite residuals (functor returned nan/inf "
                "on active points)" % self.name)
        return r

    def chi2(self, scaled=True) -> float:
        """Sum of squared residuals over (n_active - n_free_parameters)."""
        r = self.residuals(scaled=scaled)
        dof = self.n_active - len(self.free_parameters())
        if dof <= 0:
            raise ValueError(
                "model %r: %d active points cannot constrain %d parameters"
                % (self.name, self.n_active, len(self.free_parameters())))
        return float(np.dot(r, r) / dof)

    def __repr__(self):
        return "<Model %r scaling=%s n_active=%d>" % (
            self.name, self.scaling, self.n_active)


class MultiModel:
    """Several models fitted simultaneously against one parameter pool."""

    def __init__(self, models, name=""):
        models = list(models)
        if not models:
            raise ValueError("a multi-model needs at least one member")
        for m in models:
            if not isinstance(m, Model):
                raise TypeError("members must be Model instances")
        self.name = str(name)
        self.models = models

    def free_parameters(self) -> list:
        return _dedup(p for m in self.models for p in m.free_parameters())

    @property
    def n_active(self) -> int:
        return sum(m.n_active for m in self.models)

    def residuals(self, scaled=True) -> np.ndarray:
        return np.concatenate([m.residuals(scaled=scaled) for m in self.models])

    def chi2(self, scaled=True) -> float:
        r = self.residuals(scaled=scaled)
        dof = self.n_active - len(self.free_parameters())
        if dof <= 0:
            raise ValueError(
                "%d active points cannot constrain %d parameters"
                % (self.n_active, len(self.free_parameters())))
        return float(np.dot(r, r) / dof)

    def __repr__(self):
        return "<MultiModel %r members=%d>" % (self.name, len(self.models))


def model(name, functor, dataset, scaling="linear") -> Model:
    return Model(name, functor, dataset, scaling=scaling)


def multimodel(models, name="") -> MultiModel:
    return MultiModel(models, name=name)
