import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isoradial.deformation import (
    _edge_set, area_factor, back_deform, deform, eps_max, gauss_curvatures, limit_graph,
    probe_limit_graph, radius_bounds, radius_bounds_ode, sweep, thresholds,
)
from isoradial.delaunay import lattice, nearest_vertex
from isoradial.errors import EpsilonBeyondMax, InjectivityViolated, ZeroField
from isoradial.fields import FiniteField, SmoothField
from isoradial.geometry import validate


def _brute_M(z, vals):
    best = 0.0
    for u in np.flatnonzero(vals):
        for v in range(len(z)):
            if v != u:
                best = max(best, abs(vals[u] - vals[v]) / abs(z[u] - z[v]))
    return best


def test_threshold_formula(triangular):
    g = triangular
    o = nearest_vertex(g, 0)
    F = FiniteField({o: 0.3 + 0.1j, o + 1: -0.2j})
    th = thresholds(g, F)
    assert th.M_F == pytest.approx(_brute_M(g.z, F.values(g)), rel=1e-14)
    assert th.vartheta_F == pytest.approx(math.pi / 6)
    assert th.eps_F == pytest.approx(math.sin(math.pi / 6) / (2 * th.M_F * (1 + th.M_F)))
    assert th.eps_inject == pytest.approx(1 / th.M_F)
    with pytest.raises(ZeroField):
        thresholds(g, FiniteField({}))


def test_injectivity_guard(square):
    F = FiniteField({nearest_vertex(square, 0): 1.0})
    M = thresholds(square, F).M_F
    with pytest.raises(InjectivityViolated):
        deform(square, F, 1.01 / M)
    deform(square, F, 1.01 / M, check=False)


@pytest.mark.parametrize("kind", ["triangular", "quad_tiling"])
def test_zero_eps_is_identity(kind, lattices):
    g = lattices[kind]
    ge, rep = deform(g, FiniteField({0: 1.0}), 0.0)
    assert _edge_set(ge) == _edge_set(g)
    assert rep.lost == [] and rep.gained == []


def test_small_deformation_only_adds_chords(square):
    o = nearest_vertex(square, 0)
    F = FiniteField({o: 0.2 + 0.1j})
    eps = 0.5 * thresholds(square, F).eps_F
    ge, rep = deform(square, F, eps)
    assert rep.lost == [] and rep.flipped == []
    assert rep.gained and set(rep.gained) == set(rep.chords)
    assert validate(ge, "delaunay").ok
    assert {r[0] for r in rep.rows()} == {"chord"}


def test_limit_graph_matches_probe(square, quad):
    for g in (square, quad):
        F = SmoothField("mollified_shear", phi=0.7, ell=2.5, center=0.1 + 0.05j)
        assert _edge_set(limit_graph(g, F)) == _edge_set(probe_limit_graph(g, F))


@given(st.floats(0.0, 0.3), st.integers(0, 2 ** 31))
def test_area_factor_is_the_jacobian(eps, seed):
    g = lattice("triangular", 3)
    r = np.random.default_rng(seed)
    vals = 0.3 * (r.normal(size=g.n_vertices) + 1j * r.normal(size=g.n_vertices))
    back = back_deform(g, g.z)
    D = area_factor(back, vals, eps)
    zz = g.z + eps * vals
    for fi, f in enumerate(g.faces):
        a, b, c = zz[list(f)]
        area = 0.5 * ((b - a).conjugate() * (c - a)).imag
        assert area / g.area[fi] == pytest.approx(D[fi], abs=1e-12)


def test_radius_bounds_match_ode():
    R0, M1, M2 = 1.0, 0.4, 0.15
    em = eps_max(R0, M1, M2)
    for t in (0.1, 0.5, 0.9):
        b = radius_bounds(t * em, R0, M1, M2)
        up, dn = radius_bounds_ode(t * em, R0, M1, M2)
        assert b.r_plus == pytest.approx(up, rel=1e-8)
        assert b.r_minus == pytest.approx(dn, rel=1e-8)
    b0 = radius_bounds(0.0, R0, M1, M2)
    assert b0.r_plus == b0.r_minus == R0
    assert radius_bounds(em * (1 - 1e-9), R0, M1, M2).r_plus > 1e6
    with pytest.raises(EpsilonBeyondMax):
        radius_bounds(em, R0, M1, M2)
    assert eps_max(R0, M1, 0.0) == pytest.approx(1 / (2 * M1))


def test_sweep_tracks_radii(quad):
    F = SmoothField("mollified_shear", phi=-0.6, ell=2.0)
    M1, M2 = F.bounds()
    em = eps_max(1.0, M1, M2)
    steps = sweep(quad, F, np.linspace(0, 0.5 * em, 5))
    assert np.allclose(steps[0].R0, 1.0)
    assert all(s.violations == [] for s in steps)
    assert steps[-1].bounds.eps_max == pytest.approx(em)


@pytest.mark.parametrize("kind", ["square", "triangular", "quad_tiling"])
def test_isoradial_curvature_vanishes(kind, lattices):
    k = gauss_curvatures(lattices[kind])
    assert np.nanmax(np.abs(k)) < 1e-12
    assert np.isnan(k).any()
