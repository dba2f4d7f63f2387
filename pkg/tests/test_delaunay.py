import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isoradial.delaunay import (
    QUAD_EXAMPLE, LatticeSpec, check_cell_angles, complete_to_triangulation, crop,
    delaunay_from_points, generate_lattice, lattice,
)
from isoradial.errors import AllCollinear, DuplicatePoints, InvalidAngles
from isoradial.geometry import regularize, validate


def brute_force_edges(z, tol=1e-9):
    """Pairs (u, v) with an empty witness circle through u, v and a third point.

    Every Delaunay edge lies on the circumcircle of some triangle with no point inside;
    cocyclic pairs that are not polygon sides are removed afterwards by the caller.
    Triangles flatter than ``tol`` count as collinear and witness nothing.
    """
    n = len(z)
    edges = set()
    for a, b, c in itertools.combinations(range(n), 3):
        d = 2 * ((z[b] - z[a]).conjugate() * (z[c] - z[a])).imag
        longest = max(abs(z[b] - z[a]), abs(z[c] - z[a]), abs(z[c] - z[b]))
        if abs(d) / 2 / longest < tol:
            continue
        bb, cc = z[b] - z[a], z[c] - z[a]
        o = z[a] - 1j * (abs(bb) ** 2 * cc - abs(cc) ** 2 * bb) / d
        r = abs(z[a] - o)
        if np.all(np.abs(z - o) >= r - tol):
            edges |= {tuple(sorted(p)) for p in ((a, b), (b, c), (a, c))}
    return edges


def test_unit_square_is_one_face():
    g = delaunay_from_points([0, 1, 1 + 1j, 1j])
    assert g.n_faces == 1 and len(g.faces[0]) == 4
    assert len(g.edges) == 4


def test_three_points():
    g = delaunay_from_points([0, 2, 0.5 + 1j])
    assert g.faces == ((0, 1, 2),)


def test_errors():
    with pytest.raises(DuplicatePoints):
        delaunay_from_points([0, 1, 1j, 1])
    with pytest.raises(AllCollinear):
        delaunay_from_points([0, 1, 2, 3])
    with pytest.raises(InvalidAngles):
        lattice("quad_tiling", 3, alpha=(0.1, 0.2, 0.3, 0.4))
    with pytest.raises(InvalidAngles):
        lattice("hexagonal", 3)


@st.composite
def jittered_window(draw):
    n = draw(st.integers(3, 7))
    amp = draw(st.floats(0.0, 0.3))
    seed = draw(st.integers(0, 2 ** 31))
    r = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(n), np.arange(n))
    z = (xs + 1j * ys).ravel().astype(complex)
    return z + amp * (r.uniform(-1, 1, z.size) + 1j * r.uniform(-1, 1, z.size))


@given(jittered_window())
def test_matches_brute_force(z):
    g = delaunay_from_points(z)
    assert validate(g, "delaunay").ok
    got = {tuple(sorted(map(int, e))) for e in g.edges}
    witness = brute_force_edges(z)
    assert got <= witness
    # the only witnessed pairs that are not edges are diagonals of cocyclic faces
    for u, v in witness - got:
        assert any(u in f and v in f and len(f) > 3 for f in g.faces)


@given(st.integers(0, 2 ** 31), st.integers(20, 200))
def test_random_points_are_delaunay(seed, n):
    z = np.random.default_rng(seed).uniform(-1, 1, (n, 2)) @ np.array([1, 1j])
    g = delaunay_from_points(z)
    assert validate(g, "delaunay").ok
    assert g.is_triangulation()
    # Euler: triangles = 2n - 2 - hull size
    hull = len(set(g.boundary_vertices))
    assert g.n_faces == 2 * n - 2 - hull


@pytest.mark.parametrize("kind, n_sides, theta", [("square", 4, math.pi / 4), ("triangular", 3, math.pi / 6)])
def test_regular_lattices(kind, n_sides, theta):
    g = lattice(kind, 5)
    assert all(len(f) == n_sides for f in g.faces)
    assert np.allclose(g.radius, 1.0, atol=1e-14)
    assert np.allclose(g.theta[g.interior_edge_mask], theta, atol=1e-14)
    assert validate(g, "isoradial", radius=1.0).ok
    assert validate(g, "delaunay").ok
    assert g.z[np.argmin(np.abs(g.z))] == 0


def test_quad_tiling_faces_are_congruent():
    g = lattice("quad_tiling", 6, alpha=QUAD_EXAMPLE)
    assert validate(g, "isoradial", radius=1.0).ok
    assert validate(g, "delaunay").ok
    shapes = set()
    for f, c in zip(g.faces, g.center):
        w = g.z[list(f)] - c
        shapes.add(tuple(np.round(np.sort(np.angle(w) % (2 * math.pi)), 8)))
    want = {tuple(np.round(np.sort(np.array(QUAD_EXAMPLE) % (2 * math.pi)), 8)),
            tuple(np.round(np.sort((np.array(QUAD_EXAMPLE) + math.pi) % (2 * math.pi)), 8))}
    assert shapes == want


def test_quad_tiling_edge_classes():
    """Two rhombus shapes per class of parallel edges: four edge classes, four angles."""
    g = lattice("quad_tiling", 6)
    th = np.round(g.theta[g.interior_edge_mask], 9)
    a = np.array(QUAD_EXAMPLE)
    gaps = np.diff(np.r_[a, a[0] + 2 * math.pi])
    assert set(th) == set(np.round(math.pi / 2 - gaps / 2, 9))


def test_cell_angle_check():
    check_cell_angles(QUAD_EXAMPLE)
    with pytest.raises(InvalidAngles):
        check_cell_angles((0.0, 1.0, 2.0, 3.0))  # origin outside
    with pytest.raises(InvalidAngles):
        check_cell_angles((0.0, 2.0, 1.0, 4.0))


def test_completion_counts():
    g = delaunay_from_points(np.exp(2j * math.pi * np.arange(8) / 8))
    assert g.n_faces == 1
    t = complete_to_triangulation(g)
    assert t.n_faces == 6
    assert int(np.sum(t.is_chord)) == 5
    assert regularize(t).faces == g.faces
    assert complete_to_triangulation(t) is t


def test_square_completion_has_chords(square):
    t = complete_to_triangulation(square)
    ch = t.is_chord
    assert ch.sum() == square.n_faces
    assert np.allclose(t.theta[ch], 0, atol=1e-14)


def test_generated_window_is_deterministic():
    a = generate_lattice(LatticeSpec("quad_tiling", 4))
    b = generate_lattice(LatticeSpec("quad_tiling", 4))
    assert a.faces == b.faces and np.array_equal(a.z, b.z)


def test_crop(square):
    c = crop(square, lambda z: np.abs(z.imag) < 2)
    assert np.all(np.abs(c.z.imag) < 2)
    assert validate(c, "isoradial", radius=1.0).ok
    assert len(c.meta["labels"]) == c.n_vertices
