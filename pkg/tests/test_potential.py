"""Form-factor tests: closed forms, a brute-force Fourier oracle, and the
interference factor of finite arrays."""

import math

import numpy as np
import pytest

import scatterfit as sf
from scatterfit.expr import EvalContext
from scatterfit.potentials import (
    box, formfactor, lattice, polyhedron, potential, sas,
)

CUBE_SIZE = (2.0, 3.0, 1.5)


def _cube_poly(density=1.0, shift=(0.0, 0.0, 0.0)):
    hx, hy, hz = (s / 2.0 for s in CUBE_SIZE)
    sx, sy, sz = shift
    verts = [(-hx + sx, -hy + sy, -hz + sz), (hx + sx, -hy + sy, -hz + sz),
             (hx + sx, hy + sy, -hz + sz), (-hx + sx, hy + sy, -hz + sz),
             (-hx + sx, -hy + sy, hz + sz), (hx + sx, -hy + sy, hz + sz),
             (hx + sx, hy + sy, hz + sz), (-hx + sx, hy + sy, hz + sz)]
    faces = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
             (2, 3, 7, 6), (1, 2, 6, 5), (0, 4, 7, 3)]
    return polyhedron("cube", density, verts, faces)


def _qvars():
    return sf.var(["qx", "qy", "qz"])


def test_cuboid_volume_from_face_fan():
    assert _cube_poly().volume(EvalContext()) == pytest.approx(
        np.prod(CUBE_SIZE), rel=1e-14)


def test_polyhedron_matches_separable_box_form():
    qx, qy, qz = _qvars()
    pot_a = potential("a").add(_cube_poly())
    pot_b = potential("b").add(box("cube", 1.0, CUBE_SIZE))
    fa = formfactor("Fa", pot_a, qx, qy, qz)
    fb = formfactor("Fb", pot_b, qx, qy, qz)
    rng = np.random.default_rng(5)
    q = rng.normal(size=(200, 3)) * 3.0
    va = fa(q[:, 0], q[:, 1], q[:, 2])
    vb = fb(q[:, 0], q[:, 1], q[:, 2])
    assert np.all(np.abs(va - vb) <= 1e-9 * np.maximum(np.abs(vb), 1e-9))


def test_face_normal_directions_use_series_limit():
    qx, qy, qz = _qvars()
    fa = formfactor("Fa", potential("a").add(_cube_poly()), qx, qy, qz)
    fb = formfactor("Fb", potential("b").add(box("c", 1.0, CUBE_SIZE)),
                    qx, qy, qz)
    # q exactly along a face normal makes the in-plane component vanish
    q = np.array([[0.7, 0.0, 0.0], [0.0, 1.3, 0.0], [0.0, 0.0, 2.1],
                  [2 * np.pi / CUBE_SIZE[0], 0.0, 0.0]])
    va = fa(q[:, 0], q[:, 1], q[:, 2])
    vb = fb(q[:, 0], q[:, 1], q[:, 2])
    v = float(np.prod(CUBE_SIZE))
    assert np.all(np.abs(va - vb) < 1e-10 * v)


def test_forward_scattering_equals_density_times_volume():
    qx, qy, qz = _qvars()
    rho = 2.5
    pot = potential("p").add(_cube_poly(density=rho))
    f = formfactor("F", pot, qx, qy, qz)
    zero = np.zeros(1)
    v = float(np.prod(CUBE_SIZE))
    assert f(zero, zero, zero)[0] == pytest.approx(rho * v, rel=1e-12)


def test_subtracted_shape_reduces_forward_amplitude():
    qx, qy, qz = _qvars()
    rho = 3.0
    pot = potential("notched")
    pot.add(box("body", rho, (4.0, 2.0, 1.0)))
    pot.subtract(box("notch", rho, (1.0, 1.0, 1.0)))
    f = formfactor("F", pot, qx, qy, qz)
    zero = np.zeros(1)
    assert f(zero, zero, zero)[0] == pytest.approx(rho * (8.0 - 1.0),
                                                  rel=1e-12)


def test_hull_amplitude_matches_grid_fourier_sum():
    from scipy.spatial import ConvexHull
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, size=(12, 3))
    hull = ConvexHull(pts)
    remap = {old: new for new, old in enumerate(hull.vertices)}
    faces = []
    for simp, eq in zip(hull.simplices, hull.equations):
        a, b, c = pts[simp]
        tri = [remap[i] for i in simp]
        if np.cross(b - a, c - a) @ eq[:3] < 0:
            tri = [tri[0], tri[2], tri[1]]
        faces.append(tuple(tri))
    body = polyhedron("hull", 1.0,
                      [tuple(v) for v in pts[hull.vertices]], faces)
    ctx = EvalContext()
    assert body.volume(ctx) == pytest.approx(hull.volume, rel=1e-12)

    # midpoint-rule Fourier sum over an 80^3 bounding grid
    n = 80
    lo = pts.min(0) - 1e-9
    hi = pts.max(0) + 1e-9
    axes = [lo[d] + (hi[d] - lo[d]) * (np.arange(n) + 0.5) / n
            for d in range(3)]
    grid = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], 1)
    inside = np.all(grid @ hull.equations[:, :3].T
                    + hull.equations[:, 3] <= 0, axis=1)
    cell = float(np.prod((hi - lo) / n))
    pin = grid[inside]
    qs = np.array([[0.5, 0.2, -0.3], [2.0, 1.0, 0.5], [0.0, 0.0, 1.0],
                   [-1.5, 0.8, 0.0]])
    reference = np.array([np.sum(np.exp(1j * (pin @ qv))) * cell
                          for qv in qs])
    got = body._amplitude(qs, ctx)
    assert np.all(np.abs(got - reference) < 2e-3 * np.abs(reference))


def test_translation_multiplies_by_phase():
    qx, qy, qz = _qvars()
    shift = np.array([0.4, -1.1, 2.3])
    fa = formfactor("Fa", potential("a").add(_cube_poly()), qx, qy, qz)
    fs = formfactor("Fs", potential("s").add(_cube_poly(shift=shift)),
                    qx, qy, qz)
    rng = np.random.default_rng(11)
    q = rng.normal(size=(100, 3)) * 2.0
    va = fa(q[:, 0], q[:, 1], q[:, 2])
    vs = fs(q[:, 0], q[:, 1], q[:, 2])
    phase = np.exp(1j * (q @ shift))
    assert np.allclose(vs, va * phase, rtol=1e-10, atol=1e-12)
    assert np.allclose(np.abs(vs), np.abs(va), rtol=1e-10)


def test_box_center_shifts_phase_only():
    qx, qy, qz = _qvars()
    center = (1.0, 2.0, -0.5)
    fa = formfactor("Fa", potential("a").add(box("b", 1.0, CUBE_SIZE)),
                    qx, qy, qz)
    fs = formfactor("Fs",
                    potential("s").add(box("b", 1.0, CUBE_SIZE, center)),
                    qx, qy, qz)
    rng = np.random.default_rng(12)
    q = rng.normal(size=(50, 3))
    va = fa(q[:, 0], q[:, 1], q[:, 2])
    vs = fs(q[:, 0], q[:, 1], q[:, 2])
    assert np.allclose(vs, va * np.exp(1j * (q @ np.array(center))),
                       rtol=1e-12, atol=1e-14)


def test_box_nulls_at_reciprocal_edge_lengths():
    qx, qy, qz = _qvars()
    f = formfactor("F", potential("p").add(box("b", 1.0, CUBE_SIZE)),
                   qx, qy, qz)
    v = float(np.prod(CUBE_SIZE))
    for axis, w in enumerate(CUBE_SIZE):
        q = [np.zeros(1), np.zeros(1), np.zeros(1)]
        q[axis] = np.array([2 * np.pi / w])
        assert abs(f(*q)[0]) < 1e-12 * v


def test_geometry_parameters_are_discoverable_and_fittable():
    qx, qy, qz = _qvars()
    width = sf.par("width", 1.8, bounds=(0.5, 5.0))
    rho = sf.par("rho", 1.0, fixed=True)
    pot = potential("p").add(box("b", rho, (width, 2.0, 1.0)))
    f = formfactor("F", pot, qx, qy, qz)
    assert any(p is width for p in f.parameters())
    assert any(p is rho for p in f.parameters())
    assert [v.name for v in f.variables()] == ["qx", "qy", "qz"]

    intensity = sas("I", f)
    grid = np.linspace(0.05, 4.0, 80)
    zeros = np.zeros_like(grid)
    width.raw_value = 2.0
    target = intensity(grid, zeros, zeros)
    width.raw_value = 1.8
    ds = sf.DataSet("cut", [grid, zeros, zeros], target,
                    np.full_like(grid, 1e-3))
    result = sf.fit_lm(sf.model("m", intensity, ds))
    assert result.status == "converged"
    assert width.value == pytest.approx(2.0, rel=1e-8)


def test_open_surface_is_rejected():
    verts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    faces = [(0, 2, 1), (0, 1, 3), (1, 2, 3)]  # bottom of the tet missing
    with pytest.raises(ValueError, match="not closed"):
        polyhedron("open", 1.0, verts, faces)


def test_inconsistent_winding_is_rejected():
    verts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    faces = [(0, 2, 1), (0, 1, 3), (1, 2, 3), (0, 2, 3)]  # last one flipped
    with pytest.raises(ValueError, match="winding|direction"):
        polyhedron("bad", 1.0, verts, faces)


def test_inverted_body_is_rejected_at_evaluation():
    verts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    faces = [(0, 1, 2), (0, 3, 1), (1, 3, 2), (0, 2, 3)]  # inside out
    body = polyhedron("inv", 1.0, verts, faces)
    with pytest.raises(ValueError, match="counter-clockwise"):
        body.volume(EvalContext())


def test_bent_face_is_rejected_at_evaluation():
    verts = [(0, 0, 0), (1, 0, 0), (1, 1, 0.3), (0, 1, 0),
             (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    faces = [(0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
             (2, 3, 7, 6), (1, 2, 6, 5), (0, 4, 7, 3)]
    body = polyhedron("bent", 1.0, verts, faces)
    with pytest.raises(ValueError, match="planar"):
        body.volume(EvalContext())


def test_degenerate_face_is_rejected():
    verts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    with pytest.raises(ValueError, match="degenerate"):
        polyhedron("dup", 1.0, verts, [(0, 1, 1), (0, 1, 3), (1, 2, 3),
                                       (0, 2, 3)])


def test_interference_factor_peaks_and_zeros():
    u = sf.var("q")
    n_rep = 5
    period = 1000.0
    lat = lattice("L", u, period, n_rep)
    # forward peak and all Bragg positions reach the squared count
    peaks = np.array([2 * np.pi * m / period for m in range(4)])
    assert np.allclose(lat(peaks), float(n_rep ** 2), rtol=1e-9)
    # first null at one N-th of the Bragg spacing
    first_zero = 2 * np.pi / (n_rep * period)
    assert lat(np.array([first_zero]))[0] < 1e-20
    # periodic in q with period 2 pi / T away from the sharp peaks
    generic = np.linspace(0.2, 0.8, 40) * (2 * np.pi / period)
    assert np.allclose(lat(generic + 2 * np.pi / period), lat(generic),
                       rtol=1e-6)


def test_interference_factor_matches_direct_sum():
    u = sf.var("q")
    n_rep = 7
    period = 320.0
    lat = lattice("L", u, period, n_rep)
    grid = np.linspace(1e-4, 0.05, 400)
    positions = period * np.arange(n_rep)
    direct = np.abs(np.exp(1j * np.outer(grid, positions)).sum(axis=1)) ** 2
    assert np.allclose(lat(grid), direct, rtol=1e-9)


def test_interference_factor_validation():
    u = sf.var("q")
    with pytest.raises(ValueError, match="integer"):
        lattice("L", u, 100.0, 4.5)(np.array([0.01]))
    with pytest.raises(ValueError, match="positive"):
        lattice("L", u, sf.par("T", -3.0), 4)(np.array([0.01]))


def test_intensity_composition_multiplies_lattice():
    qx, qy, qz = _qvars()
    f = formfactor("F", potential("p").add(box("b", 2.0, CUBE_SIZE)),
                   qx, qy, qz)
    lat = lattice("L", qx, 500.0, 5)
    intensity = sas("I", f, [lat])
    assert intensity.name == "I"
    grid = np.linspace(0.001, 0.1, 60)
    zeros = np.zeros_like(grid)
    expected = np.abs(f(grid, zeros, zeros)) ** 2 * lat(grid)
    assert np.allclose(intensity(grid, zeros, zeros), expected, rtol=1e-12)
