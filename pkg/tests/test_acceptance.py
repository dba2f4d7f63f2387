"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import math
import time

import mpmath
import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from isoradial import variation as var
from isoradial.deformation import (
    _edge_set, deform, eps_max, eps_tilde, nabla_vs_partial_gap, sweep, thresholds,
)
from isoradial.delaunay import (
    QUAD_EXAMPLE, LatticeSpec, complete_to_triangulation, crop, generate_lattice, lattice,
    nearest_vertex, triangulate_faces,
)
from isoradial.fields import FiniteField, SmoothField
from isoradial.green import GreenFunction, green_asymptotic, green_residual
from isoradial.logdet import (
    extrapolate_dirichlet, edge_logdet_L, logdet_dirichlet, logdet_local, logdet_symbol,
)
from isoradial.operators import (
    beltrami, beltrami_factored, conformal, greens_theorem_check, kahler, kahler_factored,
)
from isoradial.rhombic import RhombicGraph, moments_from_theta, path_moments, separating_angles

KINDS3 = ("square", "triangular", "quad_tiling")
FOUR_G_OVER_PI = float(4 * mpmath.catalan / mpmath.pi)


def _line(n, ok, text, seconds):
    return f"criterion {n}: {'PASS' if ok else 'FAIL'} - {text} ({seconds:.1f} s)"


# ----------------------------------------------------------------------------
# 1. edge values of the Green's function


def test_criterion_1_green_edge_law(record):
    worst, slowest, count = 0.0, 0.0, 0
    for kind in KINDS3:
        t0 = time.perf_counter()
        g = lattice(kind, 5)
        gf = GreenFunction(g)
        mask = g.interior_edge_mask
        for (u, v), th in zip(g.edges[mask], g.theta[mask]):
            want = -th / math.tan(th) / math.pi
            worst = max(worst, abs(gf(int(u), int(v)) - want))
            count += 1
        slowest = max(slowest, time.perf_counter() - t0)
    ok = worst < 1e-10 and slowest < 10
    record(_line(1, ok, f"{count} interior edges, max |G - edge law| = {worst:.2e} (tol 1e-10)", slowest))
    assert ok


# ----------------------------------------------------------------------------
# 2. the Green's function inverts the critical Laplacian


def test_criterion_2_green_inverse(record):
    t0 = time.perf_counter()
    worst = 0.0
    for kind in KINDS3:
        g = lattice(kind, 5)
        gf = GreenFunction(g)
        for u in g.interior_vertices:
            worst = max(worst, green_residual(g, int(u), gf=gf))
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 60
    record(_line(2, ok, f"max interior residual of Delta G_u - delta_u = {worst:.2e} (tol 1e-9), "
                        "every interior source, three lattices", dt))
    assert ok


# ----------------------------------------------------------------------------
# 3. sharpened asymptotics and moment bounds


def test_criterion_3_sharpened_asymptotics(record):
    t0 = time.perf_counter()
    dists = [8, 12, 16, 24]
    side = math.sqrt(2.0)  # square-lattice edge length at unit circumradius
    g = lattice("square", dists[-1] * side + 3)
    rg = RhombicGraph(g)
    gf = GreenFunction(g, rg)
    o = nearest_vertex(g, 0)
    errs = []
    for d in dists:
        v = nearest_vertex(g, d * side)
        theta = separating_angles(rg, o, v)
        approx, _ = green_asymptotic(moments_from_theta(theta, 3), 1)
        errs.append(abs(gf(o, v) - approx))
    slope = float(np.polyfit(np.log(dists), np.log(errs), 1)[0])

    rng = np.random.default_rng(3)
    bound_ok, pairs = True, 0
    for kind in KINDS3:
        h = lattice(kind, 8)
        rh = RhombicGraph(h)
        inner = h.interior_vertices
        for _ in range(60):
            u, v = (int(x) for x in rng.choice(inner, 2, replace=False))
            p = moments_from_theta(separating_angles(rh, u, v), 9)
            bound_ok &= all(abs(p[n]) <= n * abs(p[1]) * (1 + 1e-12) for n in p)
            bound_ok &= abs(p[3]) <= 3 * abs(p[1]) * (1 + 1e-12)
            pairs += 1
    dt = time.perf_counter() - t0
    ok = slope <= -3.5 and bound_ok and dt < 120
    record(_line(3, ok, f"fitted exponent {slope:.2f} (need <= -3.5); moment bounds "
                        f"{'hold' if bound_ok else 'FAIL'} on {pairs} pairs", dt))
    assert ok


# ----------------------------------------------------------------------------
# 4. log-determinant by three routes


def test_criterion_4_logdet_routes(record):
    t0 = time.perf_counter()
    sq = lattice("square", 4)
    tr = lattice("triangular", 4)
    loc_sq = logdet_local(sq)["per_vertex"]
    loc_tr = logdet_local(tr)["per_vertex"]
    sym_sq = logdet_symbol(sq, "beltrami", N=512)
    sym_tr = logdet_symbol(tr, "beltrami", N=512)
    windows = [8, 12, 16, 24]
    graphs = [lattice("square", w) for w in windows]
    vals = logdet_dirichlet(graphs, "beltrami")
    sizes = [len(x.interior_vertices) for x in graphs]
    ext = extrapolate_dirichlet(sizes, vals)
    e1 = abs(loc_sq - sym_sq)
    e2 = abs(loc_tr - sym_tr)
    e3 = abs(loc_sq - FOUR_G_OVER_PI)
    e4 = abs(ext - FOUR_G_OVER_PI) / FOUR_G_OVER_PI
    dt = time.perf_counter() - t0
    ok = e1 < 1e-6 and e2 < 1e-6 and e3 < 1e-6 and e4 < 0.02 and dt < 300
    record(_line(4, ok, f"local-symbol square {e1:.1e}, triangular {e2:.1e}; square vs 4G/pi {e3:.1e}; "
                        f"Dirichlet extrapolation off by {100 * e4:.2f}%", dt))
    assert ok


# ----------------------------------------------------------------------------
# 5. first-order variation against exact determinants


def _random_field(g, rng):
    """Random displacements on 1 to 5 vertices within distance 3 of the origin."""
    near = [int(v) for v in g.interior_vertices if abs(g.z[v]) < 3.0]
    k = int(rng.integers(1, 6))
    pick = rng.choice(near, k, replace=False)
    return FiniteField({int(v): complex(*rng.normal(size=2)) for v in pick})


def test_criterion_5_first_order_variation(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    graphs = {k: lattice(k, 30) for k in ("square", "quad_tiling")}
    oracles = {(k, op): var.DirichletLogDet(g, op) for k, g in graphs.items() for op in var.KINDS}
    worst, schemes, rows = 0.0, set(), 0
    for case in range(20):
        kind = ("square", "quad_tiling")[case % 2]
        g = graphs[kind]
        F = _random_field(g, rng)
        tri = var.completion(g, F)
        for op in var.KINDS:
            local = var.first_order_trace(op, g, F, tri)
            fd, scheme = var.fd_first_order(op, g, F, eps=1e-5, oracle=oracles[(kind, op)])
            worst = max(worst, abs(fd - local) / abs(local))
            schemes.add(scheme)
            rows += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-3 and dt < 300
    record(_line(5, ok, f"{rows} traces (20 cases x 3 operators), max relative error {worst:.2e} "
                        f"(tol 1e-3), difference scheme: {'/'.join(sorted(schemes))}", dt))
    assert ok


# ----------------------------------------------------------------------------
# 6. flip-safety thresholds


def test_criterion_6_flip_thresholds(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    graphs = {k: lattice(k, 5) for k in KINDS3}
    graphs["custom_rhombic"] = lattice("custom_rhombic", 5, alpha=(0.3, 2.2, 4.0))
    names = sorted(graphs)
    lost = 0
    for case in range(100):
        g = graphs[names[case % len(names)]]
        F = _random_field(g, rng)
        th = thresholds(g, F)
        eps = float(rng.uniform(0.05, 0.999)) * th.eps_F
        _, rep = deform(g, F, eps)
        lost += len(rep.lost)
    stable, tried = 0, 0
    for case in range(8):
        g = graphs[names[case % len(names)]]
        F = _random_field(g, rng)
        et = eps_tilde(g, F)
        e1, e2 = sorted(rng.uniform(0.01, 0.99, 2) * et)
        a, _ = deform(g, F, float(e1))
        b, _ = deform(g, F, float(e2))
        stable += _edge_set(a) == _edge_set(b)
        tried += 1
    dt = time.perf_counter() - t0
    ok = lost == 0 and stable == tried and dt < 120
    record(_line(6, ok, f"100 cases below eps_F lost {lost} critical edges; {stable}/{tried} "
                        "pairs below bisected eps~ had identical edge sets", dt))
    assert ok


# ----------------------------------------------------------------------------
# 7. circumradius envelopes along sweeps with flips


def _skinny_angles():
    b, h = 0.1, 1.0
    R = (h * h + b * b / 4) / (2 * h)
    cc = b / 2 + 1j * (h - R)
    return sorted(np.angle(np.array([0, b, b / 2 + 1j * h]) - cc) % (2 * math.pi))


def test_criterion_7_radius_bounds(record):
    t0 = time.perf_counter()
    runs = []
    F = SmoothField("mollified_shear", phi=-math.pi / 5, ell=22)
    M1, M2 = F.bounds()
    eb = 0.5 * eps_max(1.0, M1, M2)
    for kind in ("quad_tiling", "square"):
        runs.append((kind, sweep(lattice(kind, 18), F, np.linspace(0, eb, 21)[1:])))
    g = generate_lattice(LatticeSpec("custom_rhombic", 16, {"alpha": _skinny_angles()}))
    runs.append(("skinny", sweep(g, SmoothField("shear"), np.linspace(0, 0.45, 19)[1:])))
    checked = sum(s.graph.n_faces for _, r in runs for s in r)
    bad = sum(len(s.violations) for _, r in runs for s in r)
    flips = sum(len(s.report.flipped) + len(s.report.lost) for _, r in runs for s in r)
    dt = time.perf_counter() - t0
    ok = bad == 0 and flips > 0 and dt < 120
    record(_line(7, ok, f"{checked} tracked face radii over 3 sweeps, {bad} outside [R-, R+]; "
                        f"{flips} flip events seen", dt))
    assert ok


# ----------------------------------------------------------------------------
# 8. central charge


def _strip(kind):
    def make(G1, G2):
        R = max(G1.support_radius, G2.support_radius) + 3
        W = max(abs(G1.support_center), abs(G2.support_center)) + R
        return crop(lattice(kind, W), lambda z: np.abs(z.imag) < R)

    return make


def _bilocal_residual_exponent():
    ds, rs = [], []
    for d in (8, 12, 16, 24):
        g = crop(lattice("square", d / 2 + 8), lambda z: np.abs(z.imag) < 6)
        F1 = FiniteField({nearest_vertex(g, -d / 2): 0.3 + 0.7j, nearest_vertex(g, -d / 2 + 1.4): -0.5j})
        F2 = FiniteField({nearest_vertex(g, d / 2): 0.3 + 0.7j, nearest_vertex(g, d / 2 + 1.4): -0.5j})
        r = var.second_order_bilocal("beltrami", g, F1, F2)
        ds.append(r.distance)
        rs.append(abs(r.residual))
    return float(np.polyfit(np.log(ds), np.log(rs), 1)[0])


def test_criterion_8_central_charge(record):
    t0 = time.perf_counter()
    F1 = SmoothField("bump", 0.0, 1.0, -4 + 0j, 1.0, 1.0)
    F2 = SmoothField("bump", 0.0, 1.0, 4 + 0j, 1.0, 1.0)
    ells = [2, 4, 8, 16]
    parts, ok = [], True
    for kind in ("square", "triangular"):
        for op in ("beltrami", "kahler"):
            rows = var.central_charge_fit(_strip(kind), F1, F2, ells, op, continuum=False)
            cs = [r.fitted_c for r in rows]
            gaps = [abs(c + 2) for c in cs]
            trend = all(b <= a for a, b in zip(gaps, gaps[1:]))
            inside = -2.2 <= cs[-1] <= -1.8
            ok &= trend and inside
            parts.append(f"{kind}/{op} c=" + ",".join(f"{c:.4f}" for c in cs))
    slope = _bilocal_residual_exponent()
    ok &= slope <= -4.5
    dt = time.perf_counter() - t0
    ok &= dt < 1800
    record(_line(8, ok, "; ".join(parts) + f" at ell={ells}; band [-2.2,-1.8], |c+2| non-increasing; "
                        f"bilocal residual exponent {slope:.2f} (need <= -4.5)", dt))
    assert ok


# ----------------------------------------------------------------------------
# 9. anomaly structure on the quad tiling


def test_criterion_9_anomaly_structure(record):
    t0 = time.perf_counter()
    phi, ell = -math.pi / 5, 4
    F1 = SmoothField("mollified_shear", phi, ell, -2.5 + 0j, 1.0, 1.0)
    F2 = SmoothField("mollified_shear", phi, ell, 2.5 + 0j, 1.0, 1.0)
    g = crop(lattice("quad_tiling", 15), lambda z: np.abs(z.imag) < 7)
    tri = var.completion(g, F1 + F2)
    gf = var.GreenFunction(tri)
    rng = np.random.default_rng(7)
    term = var.anomalous_terms(g, F1, F2, gf=gf, tri=tri)
    y, chi = var.chord_pair_samples(term)
    hc = var.harmonic_basis_test(*(a[rng.choice(len(y), 50, replace=False)] for a in (y, chi)))
    res = var.second_order_bilocal("beltrami", g, F1, F2, gf=gf, tri=tri, pairs=True)
    b1 = var.face_blocks(tri, F1.values(tri))
    b2 = var.face_blocks(tri, F2.values(tri))
    y2, chi2 = var.face_pair_samples(res, b1, b1.support, b2, b2.support)
    idx = rng.choice(len(y2), 50, replace=False)
    hb = var.harmonic_basis_test(y2[idx], chi2[idx])

    cell = var.QuadCell.from_angles(QUAD_EXAMPLE)
    U = SmoothField("mollified_shear", phi, 1.0, -2 + 0j, 1.0, 1.0)
    checks = var.kappa_convergence(U, cell, [2, 4, 8, 16])
    violations = sum(c.violations for c in checks)
    points = sum(c.n_points for c in checks)
    dt = time.perf_counter() - t0
    ok = hc.significant(0.05) and not hb.significant(0.05) and violations == 0 and dt < 600
    record(_line(9, ok, f"chord-chord |z|^-4 coefficient {hc.intercept:.4g}, p = {hc.p_value:.1e}; "
                        f"Beltrami p = {hb.p_value:.2f} (50 pairs each, 95% F-test); "
                        f"kappa' bound violations {violations}/{points}", dt))
    assert ok


# ----------------------------------------------------------------------------
# 10. invariant suites as property tests


@st.composite
def _point_sets(draw):
    n = draw(st.integers(8, 40))
    pts = draw(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=n, max_size=n,
                        unique_by=lambda p: (round(p[0], 3), round(p[1], 3))))
    return np.array([complex(x, y) for x, y in pts])


def _delaunay_or_none(z):
    from isoradial.delaunay import delaunay_from_points
    from isoradial.errors import GeometryError

    try:
        g = delaunay_from_points(z)
    except GeometryError:
        return None
    if np.min(g.area) < 1e-3 or np.min(np.abs(np.subtract.outer(z, z))[~np.eye(len(z), dtype=bool)]) < 0.05:
        return None
    return g


@given(kind=st.sampled_from(KINDS3), seed=st.integers(0, 10 ** 6))
def prop_path_independence(kind, seed):
    g = lattice(kind, 4)
    rg = RhombicGraph(g)
    r = np.random.default_rng(seed)
    u, v = (int(x) for x in r.choice(g.n_vertices, 2, replace=False))
    pm = path_moments(rg, rg.find_path(u, v), 9)
    # a second path: go through a detour vertex
    w = int(r.integers(g.n_vertices))
    p1 = rg.find_path(u, w)
    p2 = rg.find_path(w, v)
    alt = path_moments(rg, p1 + p2[1:], 9)
    for n in pm.p:
        assert abs(pm.p[n] - alt.p[n]) < 1e-12 * max(1, abs(pm.p[1]))


@given(pts=_point_sets())
def prop_factorizations(pts):
    g = _delaunay_or_none(pts)
    if g is None:
        return
    tri = complete_to_triangulation(g)
    assert abs(beltrami(g) - beltrami_factored(tri)).max() < 1e-10 * max(1, abs(beltrami(g)).max())
    assert abs(kahler(g) - kahler_factored(tri)).max() < 1e-10 * max(1, abs(kahler(g)).max())


@given(kind=st.sampled_from(KINDS3), seed=st.integers(0, 10 ** 6))
def prop_greens_theorem(kind, seed):
    r = np.random.default_rng(seed)
    tri = complete_to_triangulation(lattice(kind, 3))
    region = r.choice(tri.n_faces, int(r.integers(1, tri.n_faces)), replace=False)
    phi = r.normal(size=tri.n_vertices) + 1j * r.normal(size=tri.n_vertices)
    lhs, rhs = greens_theorem_check(tri, region, phi)
    assert abs(lhs - rhs) < 1e-11 * max(1, abs(lhs))


@given(kind=st.sampled_from(("square", "quad_tiling")), seed=st.integers(0, 10 ** 6))
def prop_chord_neutrality(kind, seed):
    g = lattice(kind, 3)
    r = np.random.default_rng(seed)
    choice = {}
    for fi, f in enumerate(g.faces):
        if len(f) == 4 and r.random() < 0.5:
            a, b, c, d = f
            choice[fi] = [(b, c, d), (b, d, a)]
    t1 = triangulate_faces(g)
    t2 = triangulate_faces(g, choice)
    for op in (beltrami, conformal, kahler):
        assert abs(op(g) - op(t1)).max() < 1e-12
        assert abs(op(t1) - op(t2)).max() < 1e-12


@given(theta=st.floats(-3.1, 3.1))
def prop_L_odd(theta):
    assert abs(edge_logdet_L(-theta) + edge_logdet_L(theta)) < 1e-13


@given(kind=st.sampled_from(KINDS3), a=st.complex_numbers(max_magnitude=1.0),
       b=st.complex_numbers(max_magnitude=1.0), c=st.complex_numbers(max_magnitude=1.0))
def prop_nabla_vs_partial(kind, a, b, c):
    tri = complete_to_triangulation(lattice(kind, 3))
    phi = lambda z: a * z ** 2 + b * z * np.conj(z) + c * np.conj(z) ** 2  # noqa: E731
    dphi = lambda z: 2 * a * z + b * np.conj(z)  # noqa: E731
    gap = nabla_vs_partial_gap(tri, phi, dphi, 2 * abs(a), abs(b), 2 * abs(c))
    assert gap <= 1e-12


PROPERTIES = {
    "path independence": prop_path_independence,
    "factorization identities": prop_factorizations,
    "Green's theorem": prop_greens_theorem,
    "chord neutrality": prop_chord_neutrality,
    "oddness of L": prop_L_odd,
    "nabla-vs-partial bound": prop_nabla_vs_partial,
}


def test_criterion_10_invariant_suites(record):
    t0 = time.perf_counter()
    failed = []
    for name, prop in PROPERTIES.items():
        try:
            prop()
        except Exception as exc:  # noqa: BLE001
            failed.append(f"{name}: {type(exc).__name__}")
    dt = time.perf_counter() - t0
    ok = not failed and dt < 300
    record(_line(10, ok, f"{len(PROPERTIES) - len(failed)}/{len(PROPERTIES)} property suites pass"
                         + (f"; failing: {', '.join(failed)}" if failed else ""), dt))
    assert ok, failed

