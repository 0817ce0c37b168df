"""Specular reflectivity of layered samples, unpolarized and polarized.

Sign conventions, stated once because codes differ:

* A material's scattering length density is ``sld_re + i*sld_im`` with
  ``sld_im >= 0`` meaning absorption, in 1/nm^2.
* The refractive index is ``n = 1 - delta + i*beta`` with ``delta`` and
  ``beta`` proportional to the real and imaginary SLD parts, so the
  vertical wavevector inside layer j obeys

      k_z,j^2 = (Q/2)^2 - 4*pi*((re_j - re_0) - i*(im_j - im_0))

  whose principal square root has ``Re >= 0`` and ``Im >= 0``: transmitted
  waves decay into an absorbing medium and reflectivities stay within
  [0, 1].
* Interface roughness enters as a Nevot-Croce factor
  ``exp(-2 k_z,j k_z,j+1 sigma^2)`` on each Fresnel coefficient, where
  ``sigma`` is the rms roughness of the lower layer's upper interface.
* Depth z runs from the ambient (z < 0) into the substrate; the first
  interface sits at z = 0.

Two independent engines are provided: the Parratt recursion (default) and
a 2x2 transfer-matrix product.  They must agree to within numerical noise
and are cross-checked in the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf as _erf

from .expr import Expression, Parameter, Variable, _wrap
from .models import NonFiniteModelError

__all__ = [
    "Material", "Layer", "Stack", "Multilayer",
    "amorphous", "air", "layer", "substrate", "stack", "multilayer",
    "specrefl", "pnrspec", "mix_channels", "sld_profile", "refractive_terms",
    "FORMALISMS",
]

FORMALISMS = ("parratt", "matrix")

_FOUR_PI = 4.0 * math.pi


def _closed_expr(value, label):
    node = _wrap(value)
    if node is None:
        raise TypeError("%s must be an expression or number" % label)
    if node.variables():
        raise ValueError("%s must not contain free variables" % label)
    return node


class Material:
    """A homogeneous medium described by its complex SLD."""

    def __init__(self, name, sld_re, sld_im=0.0):
        self.name = str(name)
        self.sld_re = _closed_expr(sld_re, "sld_re")
        self.sld_im = _closed_expr(sld_im, "sld_im")

    def expressions(self):
        return (self.sld_re, self.sld_im)

    def __repr__(self):
        return "<Material %r>" % self.name


class Layer:
    """A slab of material with thickness, upper-interface roughness, and an
    optional collinear magnetic SLD (signed, same units as the nuclear SLD).
    """

    def __init__(self, name, material, thickness, roughness=0.0, msld=0.0):
        if not isinstance(material, Material):
            raise TypeError("layer %r needs a Material" % name)
        self.name = str(name)
        self.material = material
        self.thickness = _closed_expr(thickness, "thickness")
        self.roughness = _closed_expr(roughness, "roughness")
        self.msld = _closed_expr(msld, "msld")

    def expressions(self):
        return self.material.expressions() + (self.thickness, self.roughness,
                                              self.msld)

    def __repr__(self):
        return "<Layer %r material=%r>" % (self.name, self.material.name)


class Stack:
    """A group of layers repeated a number of times.

    Repeats may be a parameter; its effective value must be within 1e-9 of
    a positive integer when the structure is flattened.  All repetitions
    share the same layer objects, so one thickness parameter steers every
    period.
    """

    def __init__(self, layers, repeats=1, name=""):
        layers = list(layers)
        if not layers:
            raise ValueError("a stack needs at least one layer")
        for item in layers:
            if not isinstance(item, Layer):
                raise TypeError("stacks hold layers only")
        self.name = str(name)
        self.layers = layers
        self.repeats = _closed_expr(repeats, "repeats")

    def repeat_count(self, ctx=None) -> int:
        from .expr import EvalContext
        value = float(self.repeats._eval(ctx or EvalContext()))
        rounded = round(value)
        if abs(value - rounded) > 1e-9 or rounded < 1:
            raise ValueError(
                "stack %r: repeats evaluates to %g, expected a positive "
                "integer" % (self.name, value))
        return int(rounded)

    def __repr__(self):
        return "<Stack %r layers=%d>" % (self.name, len(self.layers))


class Multilayer:
    """Ambient on top, substrate at the bottom, added items in between.

    ``add`` inserts the new item directly above the substrate, below
    everything added before, so the item list always reads top to bottom.
    """

    def __init__(self, name, ambient, substrate_layer):
        if not isinstance(ambient, Material):
            raise TypeError("ambient must be a Material")
        if not isinstance(substrate_layer, Layer):
            raise TypeError("substrate must be a Layer")
        self.name = str(name)
        self.ambient = ambient
        self.substrate = substrate_layer
        self.items: list = []

    def add(self, item) -> "Multilayer":
        if not isinstance(item, (Layer, Stack)):
            raise TypeError("only layers and stacks can be added")
        self.items.append(item)
        return self

    def structural_layers(self, ctx=None) -> list:
        """Every layer from top to bottom with stacks expanded by reference,
        substrate included last."""
        expanded: list = []
        for item in self.items:
            if isinstance(item, Stack):
                expanded.extend(item.layers * item.repeat_count(ctx))
            else:
                expanded.append(item)
        expanded.append(self.substrate)
        return expanded

    def expressions(self):
        out = list(self.ambient.expressions())
        for item in self.items:
            if isinstance(item, Stack):
                out.append(item.repeats)
                for lay in item.layers:
                    out.extend(lay.expressions())
            else:
                out.extend(item.expressions())
        out.extend(self.substrate.expressions())
        return out

    def parameters(self) -> list:
        seen: set = set()
        params: list = []
        for e in self.expressions():
            e._collect(params, [], seen)
        return params

    def __repr__(self):
        return "<Multilayer %r items=%d>" % (self.name, len(self.items))


# -- factories mirroring how samples read in scripts ------------------------

def amorphous(name, sld_re, sld_im=0.0) -> Material:
    return Material(name, sld_re, sld_im)


def air(name="Air") -> Material:
    return Material(name, 0.0, 0.0)


def layer(name, material, thickness, roughness=0.0, msld=0.0) -> Layer:
    return Layer(name, material, thickness, roughness, msld)


def substrate(name, material, roughness=0.0, msld=0.0) -> Layer:
    """Semi-infinite bottom medium; its thickness plays no role."""
    return Layer(name, material, 0.0, roughness, msld)


def stack(layers, repeats=1, name="") -> Stack:
    return Stack(layers, repeats=repeats, name=name)


def multilayer(name, ambient, substrate_layer) -> Multilayer:
    return Multilayer(name, ambient, substrate_layer)


def refractive_terms(material, wavelength):
    """(delta, beta) of n = 1 - delta + i*beta at the given wavelength.

    Both scale as wavelength^2/(2*pi) times the SLD parts; wavelength and
    SLD must share the same length unit.
    """
    from .expr import scalar
    factor = wavelength * wavelength / (2.0 * math.pi)
    return factor * scalar(material.sld_re), factor * scalar(material.sld_im)


# -- slab evaluation ---------------------------------------------------------

def _scalar_eval(node, ctx) -> float:
    value = np.asarray(node._eval(ctx))
    if value.ndim:
        raise ValueError("structure quantities must evaluate to scalars")
    return float(value.real) if not np.iscomplexobj(value) else float(value)


def _slab_arrays(sample, ctx, spin=0.0):
    """Evaluate the structure into parallel arrays, ambient first.

    Returns (rho, d, sigma) where ``rho`` is the internal complex density
    ``(re + spin*msld) - i*im``; ``sigma[i]`` is the roughness of the
    interface above slab i.
    """
    layers = sample.structural_layers(ctx)
    n = len(layers) + 1
    rho = np.empty(n, dtype=complex)
    d = np.zeros(n)
    sigma = np.zeros(n)
    amb_re = _scalar_eval(sample.ambient.sld_re, ctx)
    amb_im = _scalar_eval(sample.ambient.sld_im, ctx)
    rho[0] = amb_re - 1j * amb_im
    for i, lay in enumerate(layers, start=1):
        re_v = _scalar_eval(lay.material.sld_re, ctx)
        im_v = _scalar_eval(lay.material.sld_im, ctx)
        rho[i] = (re_v + spin * _scalar_eval(lay.msld, ctx)) - 1j * im_v
        thick = _scalar_eval(lay.thickness, ctx)
        rough = _scalar_eval(lay.roughness, ctx)
        if thick < 0:
            raise NonFiniteModelError(
                "layer %r: negative thickness %g" % (lay.name, thick))
        if rough < 0:
            raise NonFiniteModelError(
                "layer %r: negative roughness %g" % (lay.name, rough))
        d[i] = thick
        sigma[i] = rough
    d[-1] = 0.0  # substrate is semi-infinite
    return rho, d, sigma


def _kz_table(q, rho):
    """k_z per slab, shape (n_slabs, n_q), principal branch Im >= 0."""
    qq = np.asarray(q, dtype=float) ** 2 / 4.0
    kz = np.sqrt(qq[None, :] - _FOUR_PI * (rho[:, None] - rho[0]))
    return np.where(kz.imag < 0, -kz, kz)


def _interface_r(kz, sigma):
    """Nevot-Croce damped Fresnel coefficient per interface, (n-1, n_q)."""
    top = kz[:-1]
    bot = kz[1:]
    num = top - bot
    den = top + bot
    with np.errstate(all="ignore"):
        r = np.where(num == 0, 0.0 + 0.0j, num / den)
    damp = np.exp(-2.0 * top * bot * (sigma[1:, None] ** 2))
    return r * damp


def _reflectivity_parratt(q, rho, d, sigma):
    kz = _kz_table(q, rho)
    r = _interface_r(kz, sigma)
    x = r[-1]
    for j in range(len(rho) - 2, 0, -1):
        phase = np.exp(2j * kz[j] * d[j])
        t = x * phase
        x = (r[j - 1] + t) / (1.0 + r[j - 1] * t)
    return (x * np.conj(x)).real


def _reflectivity_matrix(q, rho, d, sigma):
    kz = _kz_table(q, rho)
    r = _interface_r(kz, sigma)
    nq = kz.shape[1]
    m11 = np.ones(nq, dtype=complex)
    m12 = np.zeros(nq, dtype=complex)
    m21 = np.zeros(nq, dtype=complex)
    m22 = np.ones(nq, dtype=complex)
    for j in range(len(rho) - 1):
        b = kz[j] * d[j]
        up = np.exp(-1j * b)
        down = np.exp(1j * b)
        c11 = up
        c12 = r[j] * up
        c21 = r[j] * down
        c22 = down
        n11 = m11 * c11 + m12 * c21
        n12 = m11 * c12 + m12 * c22
        n21 = m21 * c11 + m22 * c21
        n22 = m21 * c12 + m22 * c22
        # rescale to keep the growing exponentials in range; the reflectance
        # ratio is invariant under scalar multiples
        scale = np.maximum(np.abs(n11), np.abs(n22))
        scale = np.where(scale > 0, scale, 1.0)
        m11, m12, m21, m22 = n11 / scale, n12 / scale, n21 / scale, n22 / scale
    with np.errstate(all="ignore"):
        x = m21 / m11
    return (x * np.conj(x)).real


_ENGINES = {"parratt": _reflectivity_parratt, "matrix": _reflectivity_matrix}


class SpecularReflectivity(Expression):
    """R(Q) of a multilayer as a functor of the scattering vector."""

    def __init__(self, name, q, sample, formalism="parratt"):
        if not isinstance(q, Variable):
            raise TypeError("the scattering vector must be a Variable")
        if not isinstance(sample, Multilayer):
            raise TypeError("sample must be a Multilayer")
        if formalism not in FORMALISMS:
            raise ValueError("formalism must be one of %s"
                             % ", ".join(FORMALISMS))
        self.name = name
        self.q = q
        self.sample = sample
        self.formalism = formalism

    def _collect(self, params, variables, seen):
        self.q._collect(params, variables, seen)
        for e in self.sample.expressions():
            e._collect(params, variables, seen)

    def _eval(self, ctx):
        q = np.atleast_1d(np.asarray(ctx.var_values[id(self.q)], dtype=float))
        rho, d, sigma = _slab_arrays(self.sample, ctx)
        out = _ENGINES[self.formalism](q, rho, d, sigma)
        if np.ndim(ctx.var_values[id(self.q)]) == 0:
            return out[0]
        return out


def specrefl(name, q, sample, formalism="parratt") -> SpecularReflectivity:
    """Unpolarized specular reflectivity functor R(Q)."""
    return SpecularReflectivity(name, q, sample, formalism)


def mix_channels(rpp, rpm, rmp, rmm, p_incident, p_final):
    """Blend the four spin-channel reflectivities for imperfect polarization.

    The beam weights are w+(p) = (1+p)/2 and w-(p) = (1-p)/2 applied
    independently before and after the sample.
    """
    wi_p = 0.5 * (1.0 + p_incident)
    wi_m = 0.5 * (1.0 - p_incident)
    wf_p = 0.5 * (1.0 + p_final)
    wf_m = 0.5 * (1.0 - p_final)
    return (wi_p * wf_p * rpp + wi_p * wf_m * rpm
            + wi_m * wf_p * rmp + wi_m * wf_m * rmm)


class PolarizedReflectivity(Expression):
    """Measured polarized reflectivity for collinear magnetization.

    The two non-spin-flip channels see the nuclear SLD shifted by the
    signed magnetic SLD (rho +- msld); spin-flip channels vanish for
    collinear moments.  ``p_incident``/``p_final`` are the effective
    polarizer and analyzer efficiencies in [-1, 1]; sign flips encode
    flipper states, so one functor per measured cross-section is built by
    passing the signed efficiency products.
    """

    def __init__(self, name, q, sample, p_incident, p_final,
                 formalism="parratt"):
        if not isinstance(q, Variable):
            raise TypeError("the scattering vector must be a Variable")
        if not isinstance(sample, Multilayer):
            raise TypeError("sample must be a Multilayer")
        if formalism not in FORMALISMS:
            raise ValueError("formalism must be one of %s"
                             % ", ".join(FORMALISMS))
        self.name = name
        self.q = q
        self.sample = sample
        self.formalism = formalism
        self.p_incident = _closed_expr(p_incident, "p_incident")
        self.p_final = _closed_expr(p_final, "p_final")

    def _collect(self, params, variables, seen):
        self.q._collect(params, variables, seen)
        for e in self.sample.expressions():
            e._collect(params, variables, seen)
        self.p_incident._collect(params, variables, seen)
        self.p_final._collect(params, variables, seen)

    def _eval(self, ctx):
        pi = _scalar_eval(self.p_incident, ctx)
        pf = _scalar_eval(self.p_final, ctx)
        if abs(pi) > 1.0 or abs(pf) > 1.0:
            raise ValueError("polarization efficiencies must lie in [-1, 1]")
        q = np.atleast_1d(np.asarray(ctx.var_values[id(self.q)], dtype=float))
        engine = _ENGINES[self.formalism]
        rho_p, d, sigma = _slab_arrays(self.sample, ctx, spin=+1.0)
        rho_m, _, _ = _slab_arrays(self.sample, ctx, spin=-1.0)
        r_pp = engine(q, rho_p, d, sigma)
        r_mm = engine(q, rho_m, d, sigma)
        out = mix_channels(r_pp, 0.0, 0.0, r_mm, pi, pf)
        if np.ndim(ctx.var_values[id(self.q)]) == 0:
            return out[0]
        return out


def pnrspec(name, q, sample, p_incident, p_final,
            formalism="parratt") -> PolarizedReflectivity:
    """Polarized specular reflectivity functor for one measured channel."""
    return PolarizedReflectivity(name, q, sample, p_incident, p_final,
                                 formalism)


def sld_profile(sample, z, component="re"):
    """Depth profile of the SLD with error-function smeared interfaces.

    Parameters
    ----------
    sample : Multilayer
    z : array
        Depths in nm; negative is the ambient side, the first interface
        sits at z = 0.
    component : {"re", "im", "msld"}
    """
    from .expr import EvalContext
    if component not in ("re", "im", "msld"):
        raise ValueError("component must be 're', 'im' or 'msld'")
    ctx = EvalContext()
    layers = sample.structural_layers(ctx)
    if component == "re":
        values = [_scalar_eval(sample.ambient.sld_re, ctx)]
        values += [_scalar_eval(l.material.sld_re, ctx) for l in layers]
    elif component == "im":
        values = [_scalar_eval(sample.ambient.sld_im, ctx)]
        values += [_scalar_eval(l.material.sld_im, ctx) for l in layers]
    else:
        values = [0.0] + [_scalar_eval(l.msld, ctx) for l in layers]
    sigmas = [_scalar_eval(l.roughness, ctx) for l in layers]
    depths = [0.0]
    for lay in layers[:-1]:
        depths.append(depths[-1] + _scalar_eval(lay.thickness, ctx))
    z = np.asarray(z, dtype=float)
    profile = np.full(z.shape, values[0])
    for i in range(len(layers)):
        jump = values[i + 1] - values[i]
        if jump == 0.0:
            continue
        s = sigmas[i]
        if s > 0:
            step = 0.5 * (1.0 + _erf((z - depths[i]) / (math.sqrt(2.0) * s)))
        else:
            step = 0.5 * (1.0 + np.sign(z - depths[i]))
        profile = profile + jump * step
    return profile
