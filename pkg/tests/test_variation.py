import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isoradial.delaunay import delaunay_from_points, lattice, nearest_vertex
from isoradial.errors import SupportsOverlap
from isoradial.fields import FiniteField
from isoradial.green import GreenFunction
from isoradial.operators import beltrami, conformal, kahler
from isoradial.variation import (
    KINDS, angle_variation, anomaly_matrix, beltrami_derivative, beltrami_derivative_back, big_D,
    chord_anomaly, completion, delta_conformal, delta_operator, face_blocks, first_order_trace,
    first_order_trace_green, fit_central_charge, kernel_bounds, nabla_power_sum,
    second_order_bilocal, trace_with_green,
)

OPS = {"beltrami": beltrami, "conformal": conformal, "kahler": kahler}


@pytest.fixture(scope="module")
def generic():
    z = np.random.default_rng(21).uniform(-3, 3, (90, 2)) @ np.array([1, 1j])
    g = delaunay_from_points(z)
    vals = np.random.default_rng(22).normal(size=90) + 1j * np.random.default_rng(23).normal(size=90)
    return g, 0.2 * vals


def _fd_matrix(op, g, vals, h=1e-6):
    plus = op(g.with_positions(g.z + h * vals))
    minus = op(g.with_positions(g.z - h * vals))
    return (plus - minus) / (2 * h)


def test_angle_variation_matches_finite_differences(generic):
    g, vals = generic
    av = angle_variation(face_blocks(g, vals))
    h = 1e-6

    def angles(zz):
        q = (zz[av.b] - zz[av.n]) / (zz[av.a] - zz[av.n])
        return 0.5 * math.pi - np.angle(q)

    fd = (angles(g.z + h * vals) - angles(g.z - h * vals)) / (2 * h)
    assert np.allclose(av.dtheta, fd, atol=1e-7)


@pytest.mark.parametrize("kind", KINDS)
def test_operator_variation_matches_finite_differences(kind, generic):
    g, vals = generic
    dO = delta_operator(face_blocks(g, vals), kind)
    fd = _fd_matrix(OPS[kind], g, vals)
    rows = g.interior_vertices
    scale = max(1.0, abs(dO).max())
    assert abs((dO - fd)[rows]).max() < 1e-6 * scale


def test_holomorphic_fields_keep_angles(generic):
    g, _ = generic
    for vals in (np.ones(g.n_vertices) * (0.3 - 1j), 1j * g.z, (2 - 1j) * g.z + 4):
        b = face_blocks(g, vals)
        assert np.allclose(angle_variation(b).dtheta, 0, atol=1e-12)
        assert abs(delta_operator(b, "beltrami")).max() < 1e-9


def test_translation_has_no_first_order_effect(quad):
    F = FiniteField({v: 0.5 + 0.5j for v in range(quad.n_vertices)})
    for kind in KINDS:
        assert abs(first_order_trace(kind, quad, F)) < 1e-12


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("lat", ["square", "triangular", "quad_tiling"])
def test_local_formula_equals_green_trace(kind, lat, lattices):
    g = lattices[lat]
    o = nearest_vertex(g, 0)
    nb = int(next(v for u, v in g.edges if u == o))
    F = FiniteField({o: 0.3 + 0.2j, nb: -0.1j})
    local = first_order_trace(kind, g, F)
    trace = first_order_trace_green(kind, g, F)
    assert local == pytest.approx(trace.real, abs=1e-12)
    assert abs(trace.imag) < 1e-12


def test_first_order_vanishes_on_triangular(triangular):
    o = nearest_vertex(triangular, 0)
    F = FiniteField({o: 0.3 + 0.2j, o + 3: -0.1j})
    for kind in KINDS:
        assert abs(first_order_trace(kind, triangular, F)) < 1e-12


def test_unknown_kind(square):
    with pytest.raises(ValueError):
        first_order_trace("nope", square, FiniteField({0: 1}))


def test_anomaly_is_the_operator_gap(quad):
    o = nearest_vertex(quad, 0)
    F = FiniteField({o: 0.25 - 0.1j})
    tri = completion(quad, F)
    b = face_blocks(tri, F.values(tri))
    gap = delta_conformal(b) - delta_operator(b, "beltrami")
    assert abs(gap - anomaly_matrix(b)).max() < 1e-12
    u, v, val, _ = chord_anomaly(b)
    assert len(u) > 0 and np.abs(val).max() > 1e-6
    gf = GreenFunction(tri)
    jump = first_order_trace("conformal", quad, F) - first_order_trace("beltrami", quad, F)
    assert jump == pytest.approx(trace_with_green(anomaly_matrix(b), gf).real, abs=1e-12)


def test_chords_through_the_centre_are_neutral(square):
    o = nearest_vertex(square, 0)
    F = FiniteField({o: 0.25 - 0.1j})
    tri = completion(square, F)
    _, _, val, _ = chord_anomaly(face_blocks(tri, F.values(tri)))
    assert len(val) > 0 and np.abs(val).max() < 1e-12


def test_big_D_at_zero_is_the_plain_factor():
    r = np.random.default_rng(4)
    dF = r.normal(size=5) + 1j * r.normal(size=5)
    dbF = r.normal(size=5) + 1j * r.normal(size=5)
    K = big_D(dF, dbF, 0.0)
    assert np.allclose(K[:, 0, 0], 0) and np.allclose(K[:, 1, 1], 0)
    assert np.allclose(K[:, 0, 1], -4 * dbF.conj())
    assert np.allclose(K[:, 1, 0], -4 * dbF)


@pytest.mark.parametrize("eps", [0.0, 0.01, 0.03])
def test_back_deformed_derivative(eps, generic):
    g, vals = generic
    moved = g.with_positions(g.z + eps * vals)
    direct = beltrami_derivative(moved, vals)
    back = beltrami_derivative_back(g, vals, eps)
    scale = abs(direct).max()
    assert abs(direct - back).max() < 1e-11 * scale
    fd = _fd_matrix(beltrami, moved, vals)
    assert abs((direct - fd)[g.interior_vertices]).max() < 1e-6 * scale


def test_kernel_bounds_grow_with_eps():
    a = kernel_bounds(0.0, 0.5, 0.2)
    b = kernel_bounds(0.1, 0.5, 0.2)
    assert a[0] == pytest.approx(4 * 0.5 + 16 * 0.2)
    assert all(y > x for x, y in zip(a, b))


@given(st.lists(st.floats(0, 2 * math.pi, exclude_max=True), min_size=3, max_size=3, unique=True))
def test_nabla_power_sum_on_coordinates(angles):
    a = np.sort(angles)
    if np.min(np.diff(np.r_[a, a[0] + 2 * math.pi])) < 0.05:
        return
    assert nabla_power_sum(a, 1) == pytest.approx(1.0, abs=1e-9)
    assert abs(nabla_power_sum(a, -1)) < 1e-9
    assert abs(nabla_power_sum(a, 0)) < 1e-9


def test_bilocal_is_symmetric_and_rejects_overlap():
    g = lattice("square", 9)
    a, b = nearest_vertex(g, -4), nearest_vertex(g, 4)
    F1, F2 = FiniteField({a: 0.3 + 0.1j}), FiniteField({b: -0.2j})
    for kind in KINDS:
        x = second_order_bilocal(kind, g, F1, F2)
        y = second_order_bilocal(kind, g, F2, F1)
        assert x.exact == pytest.approx(y.exact, rel=1e-10)
        assert abs(x.imag) < 1e-12
        assert 0 < x.distance < abs(g.z[a] - g.z[b])
    with pytest.raises(SupportsOverlap):
        second_order_bilocal("beltrami", g, F1, FiniteField({a: 1j}))


def test_fit_central_charge_recovers_scale():
    k = np.random.default_rng(0).normal(size=(7, 9))
    assert fit_central_charge(-3.5 * k, k) == pytest.approx(3.5)



def test_p3_gradient_bound_is_saturated_only_in_the_limit():
    equilateral = [0, 2 * math.pi / 3, 4 * math.pi / 3]
    assert abs(nabla_power_sum(equilateral, 3)) < 1e-12
    for d in (1e-1, 1e-2, 1e-3):
        assert abs(nabla_power_sum([0, d, 2 * d], 3)) < 6
    assert abs(nabla_power_sum([0, 1e-3, 2e-3], 3)) == pytest.approx(6, abs=1e-4)
