"""Scattering amplitudes of 3-D bodies built from boxes and polyhedra.

A potential is a signed union of homogeneous shapes; its scattering
amplitude is the Fourier transform of the density,

    F(q) = sum_k sign_k * rho_k * integral_{V_k} exp(i q . r) dV.

Boxes use the separable product of sin(x)/x factors.  Polyhedra reduce the
volume integral to face integrals and the face integrals to edge terms by
applying the divergence theorem twice; every edge contributes a closed-form
line integral, so the result is exact up to roundoff.  Directions where a
denominator vanishes (q near zero, or q normal to a face) switch to series
limits before the division happens.

Lattice factors for finite periodic arrays and the small-angle intensity
composition live here as well, both as expression nodes so parameters stay
fittable through them.
"""

from __future__ import annotations

import math

import numpy as np

from .expr import Expression, Variable, _wrap

__all__ = [
    "Box", "Polyhedron", "Potential", "FormFactor",
    "box", "polyhedron", "potential", "formfactor", "lattice", "sas",
]

# relative thresholds for switching to the series limit of a vanishing
# denominator; both chosen so the bracketing branches overlap to ~1e-8
_TINY_Q = 1e-8
_TINY_QPLANE = 1e-5


def _closed(value, label):
    node = _wrap(value)
    if node is None:
        raise TypeError("%s must be an expression or number" % label)
    if node.variables():
        raise ValueError("%s must not contain free variables" % label)
    return node


def _num(node, ctx) -> float:
    v = np.asarray(node._eval(ctx))
    if v.ndim:
        raise ValueError("shape geometry must evaluate to scalars")
    return float(v.real)


def _sinc(x):
    """sin(x)/x with the limit 1 at x = 0."""
    return np.sinc(x / np.pi)


class Box:
    """Axis-aligned cuboid given by edge lengths and center position."""

    def __init__(self, name, density, size, center=(0.0, 0.0, 0.0)):
        self.name = str(name)
        self.density = _closed(density, "density")
        if len(size) != 3 or len(center) != 3:
            raise ValueError("size and center need three components")
        self.size = tuple(_closed(s, "size") for s in size)
        self.center = tuple(_closed(c, "center") for c in center)

    def expressions(self):
        return (self.density,) + self.size + self.center

    def _amplitude(self, q, ctx):
        w = np.array([_num(s, ctx) for s in self.size])
        if np.any(w < 0):
            raise ValueError("box %r has a negative edge length" % self.name)
        c = np.array([_num(x, ctx) for x in self.center])
        f = w.prod() * np.exp(1j * (q @ c))
        for axis in range(3):
            f = f * _sinc(0.5 * q[:, axis] * w[axis])
        return f

    def volume(self, ctx) -> float:
        return float(np.prod([_num(s, ctx) for s in self.size]))


class Polyhedron:
    """Closed polyhedral body from vertices and oriented faces.

    Faces list vertex indices counter-clockwise as seen from outside.
    The directed-edge structure is checked at construction; planarity and
    orientation depend on the current vertex values and are checked at
    every evaluation.
    """

    def __init__(self, name, density, vertices, faces):
        self.name = str(name)
        self.density = _closed(density, "density")
        verts = []
        for v in vertices:
            if len(v) != 3:
                raise ValueError("each vertex needs three components")
            verts.append(tuple(_closed(c, "vertex") for c in v))
        if len(verts) < 4:
            raise ValueError("a closed body needs at least four vertices")
        self.vertices = tuple(verts)
        self.faces = tuple(tuple(int(i) for i in f) for f in faces)
        self._check_topology()

    def _check_topology(self):
        n = len(self.vertices)
        seen: dict = {}
        for fi, face in enumerate(self.faces):
            if len(face) < 3 or len(set(face)) != len(face):
                raise ValueError("face %d is degenerate" % fi)
            for idx in face:
                if not 0 <= idx < n:
                    raise ValueError("face %d references vertex %d which "
                                     "does not exist" % (fi, idx))
            for a, b in zip(face, face[1:] + face[:1]):
                if (a, b) in seen:
                    raise ValueError(
                        "edge %d-%d appears twice with the same direction; "
                        "check the face winding" % (a, b))
                seen[(a, b)] = fi
        for a, b in seen:
            if (b, a) not in seen:
                raise ValueError(
                    "edge %d-%d has no partner; the surface is not closed"
                    % (a, b))

    def expressions(self):
        out = [self.density]
        for v in self.vertices:
            out.extend(v)
        return tuple(out)

    def _vertex_array(self, ctx):
        return np.array([[_num(c, ctx) for c in v] for v in self.vertices])

    def _geometry(self, ctx):
        """Current vertex positions plus derived face and body quantities."""
        verts = self._vertex_array(ctx)
        center = verts.mean(axis=0)
        diam = 2.0 * np.max(np.linalg.norm(verts - center, axis=1))
        if diam == 0:
            raise ValueError("polyhedron %r has collapsed" % self.name)
        normals = []
        areas = []
        centroids = []
        volume = 0.0
        moment = np.zeros(3)
        for fi, face in enumerate(self.faces):
            pts = verts[list(face)]
            area_vec = np.zeros(3)
            for i in range(len(pts)):
                area_vec += np.cross(pts[i], pts[(i + 1) % len(pts)])
            area_vec *= 0.5
            area = np.linalg.norm(area_vec)
            if area <= 0:
                raise ValueError("face %d of %r has zero area"
                                 % (fi, self.name))
            nrm = area_vec / area
            dist = np.abs((pts - pts[0]) @ nrm)
            if np.max(dist) > 1e-9 * diam:
                raise ValueError("face %d of %r is not planar"
                                 % (fi, self.name))
            csum = np.zeros(3)
            asum = 0.0
            for i in range(1, len(pts) - 1):
                tri_vec = 0.5 * np.cross(pts[i] - pts[0], pts[i + 1] - pts[0])
                signed = tri_vec @ nrm
                csum += signed * (pts[0] + pts[i] + pts[i + 1]) / 3.0
                asum += signed
                volume += pts[0] @ np.cross(pts[i], pts[i + 1]) / 6.0
                moment += (pts[0] @ np.cross(pts[i], pts[i + 1]) / 6.0) \
                    * (pts[0] + pts[i] + pts[i + 1]) / 4.0
            normals.append(nrm)
            areas.append(area)
            centroids.append(csum / asum)
        if volume <= 0:
            raise ValueError(
                "polyhedron %r has non-positive volume; faces must wind "
                "counter-clockwise viewed from outside" % self.name)
        return {
            "verts": verts,
            "normals": normals,
            "areas": areas,
            "centroids": centroids,
            "volume": volume,
            "center_of_mass": moment / volume,
            "diam": diam,
        }

    def volume(self, ctx) -> float:
        return self._geometry(ctx)["volume"]

    def _amplitude(self, q, ctx):
        g = self._geometry(ctx)
        verts = g["verts"]
        diam = g["diam"]
        qsq = (q ** 2).sum(axis=1)
        qnorm = np.sqrt(qsq)
        acc = np.zeros(len(q), dtype=complex)
        for face, nrm, area, fcent in zip(self.faces, g["normals"],
                                          g["areas"], g["centroids"]):
            qn = q @ nrm
            qp = q - qn[:, None] * nrm
            qp_sq = (qp ** 2).sum(axis=1)
            face_int = np.zeros(len(q), dtype=complex)
            pts = verts[list(face)]
            for i in range(len(pts)):
                a = pts[i]
                b = pts[(i + 1) % len(pts)]
                delta = b - a
                length = np.linalg.norm(delta)
                tangent = delta / length
                outward = np.cross(tangent, nrm)
                mid = 0.5 * (a + b)
                face_int += ((qp @ outward) * length
                             * np.exp(1j * (q @ mid))
                             * _sinc(0.5 * (q @ delta)))
            with np.errstate(all="ignore"):
                face_int = face_int / (1j * qp_sq)
            grazing = np.sqrt(qp_sq) * diam < _TINY_QPLANE
            if np.any(grazing):
                face_int[grazing] = area * np.exp(1j * (q[grazing] @ fcent))
            acc += qn * face_int
        with np.errstate(all="ignore"):
            acc = acc / (1j * qsq)
        forward = qnorm * diam < _TINY_Q
        if np.any(forward):
            acc[forward] = g["volume"] * np.exp(
                1j * (q[forward] @ g["center_of_mass"]))
        return acc


class Potential:
    """Signed combination of homogeneous shapes."""

    def __init__(self, name):
        self.name = str(name)
        self.terms: list = []

    def add(self, shape) -> "Potential":
        self._append(shape, +1.0)
        return self

    def subtract(self, shape) -> "Potential":
        """Carve the shape out; its density cancels whatever it overlaps."""
        self._append(shape, -1.0)
        return self

    def _append(self, shape, sign):
        if not isinstance(shape, (Box, Polyhedron)):
            raise TypeError("only boxes and polyhedra can be combined")
        self.terms.append((sign, shape))

    def expressions(self):
        out = []
        for _, shape in self.terms:
            out.extend(shape.expressions())
        return tuple(out)

    def amplitude(self, q, ctx):
        if not self.terms:
            raise ValueError("potential %r has no shapes" % self.name)
        total = np.zeros(len(q), dtype=complex)
        for sign, shape in self.terms:
            rho = _num(shape.density, ctx)
            total += sign * rho * shape._amplitude(q, ctx)
        return total


def box(name, density, size, center=(0.0, 0.0, 0.0)) -> Box:
    return Box(name, density, size, center)


def polyhedron(name, density, vertices, faces) -> Polyhedron:
    return Polyhedron(name, density, vertices, faces)


def potential(name) -> Potential:
    return Potential(name)


class FormFactor(Expression):
    """Complex scattering amplitude F(qx, qy, qz) of a potential."""

    def __init__(self, name, pot, qx, qy, qz):
        if not isinstance(pot, Potential):
            raise TypeError("expected a Potential")
        for v in (qx, qy, qz):
            if not isinstance(v, Variable):
                raise TypeError("the three q components must be Variables")
        self.name = name
        self.pot = pot
        self.qvars = (qx, qy, qz)

    def _collect(self, params, variables, seen):
        for v in self.qvars:
            v._collect(params, variables, seen)
        for e in self.pot.expressions():
            e._collect(params, variables, seen)

    def _eval(self, ctx):
        raw = [ctx.var_values[id(v)] for v in self.qvars]
        scalar_in = all(np.ndim(r) == 0 for r in raw)
        comps = np.broadcast_arrays(*[np.atleast_1d(np.asarray(r, float))
                                      for r in raw])
        q = np.stack([c.ravel() for c in comps], axis=1)
        out = self.pot.amplitude(q, ctx)
        if scalar_in:
            return complex(out[0])
        return out.reshape(comps[0].shape)


def formfactor(name, pot, qx, qy, qz) -> FormFactor:
    return FormFactor(name, pot, qx, qy, qz)


class LatticeFactor(Expression):
    """Interference factor of a finite 1-D array of identical repeats.

    For count N and period T along the direction probed by ``q_along``,

        L(q) = sin(N q T / 2)^2 / sin(q T / 2)^2

    with the limit N^2 wherever the denominator vanishes (the structure
    peaks at multiples of 2 pi / T).
    """

    def __init__(self, name, q_along, period, count):
        q_along = _wrap(q_along)
        if q_along is None:
            raise TypeError("q_along must be an expression")
        self.name = name
        self.q_along = q_along
        self.period = _closed(period, "period")
        self.count = _closed(count, "count")

    def _collect(self, params, variables, seen):
        self.q_along._collect(params, variables, seen)
        self.period._collect(params, variables, seen)
        self.count._collect(params, variables, seen)

    def _eval(self, ctx):
        u = np.asarray(self.q_along._eval(ctx))
        period = _num(self.period, ctx)
        if period <= 0:
            raise ValueError("lattice period must be positive")
        count = _num(self.count, ctx)
        n = round(count)
        if abs(count - n) > 1e-9 or n < 1:
            raise ValueError("lattice count evaluates to %g, expected a "
                             "positive integer" % count)
        x = 0.5 * u * period
        den = np.sin(x)
        num = np.sin(n * x)
        with np.errstate(all="ignore"):
            ratio = np.where(np.abs(den) < 1e-12, float(n), num / den)
        return ratio ** 2


def lattice(name, q_along, period, count) -> LatticeFactor:
    return LatticeFactor(name, q_along, period, count)


def sas(name, form, lattices=()) -> Expression:
    """Small-angle intensity |F|^2 times any lattice factors."""
    from .expr import absolute
    out = absolute(form) ** 2
    for item in lattices:
        out = out * item
    out.name = name
    return out
