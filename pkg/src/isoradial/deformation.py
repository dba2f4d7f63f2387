"""Geometric deformations: thresholds, re-Delaunay with flip reports, the limit graph,
back-deformation and circumradius bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from .delaunay import delaunay_from_points, fan
from .errors import (
    DegenerateQuartic,
    EpsilonBeyondMax,
    InjectivityViolated,
)
from .fields import Field, SmoothField, require_nonzero
from .geometry import PolyhedralGraph, face_curvature, merge_faces, regularize
from .operators import nabla


def _edge_set(graph: PolyhedralGraph) -> set:
    return {(int(u), int(v)) for u, v in graph.edges}


# ----------------------------------------------------------------------------
# thresholds


@dataclass
class Thresholds:
    M_F: float
    eps_inject: float
    vartheta_F: float
    eps_F: float
    eps_tilde: float | None = None
    M_check: float | None = None
    theta_check: float | None = None
    eps_check: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def difference_quotient_max(z, vals, touched, chunk: int = 256) -> float:
    """``max |F(u) - F(v)| / |z(u) - z(v)|`` over pairs with ``u`` in ``touched``."""
    best = 0.0
    touched = np.asarray(touched)
    for s in range(0, len(touched), chunk):
        t = touched[s:s + chunk]
        dz = z[t][:, None] - z[None, :]
        dv = vals[t][:, None] - vals[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.abs(dv) / np.abs(dz)
        q[dz == 0] = 0.0
        best = max(best, float(np.nanmax(q)))
    return best


def thresholds(graph_cr: PolyhedralGraph, F: Field) -> Thresholds:
    """Flip-safety thresholds of a field on a Delaunay graph.

    ``eps_F = sin(vartheta_F) / (2 M_F (1 + M_F))`` where ``M_F`` is the largest
    difference quotient with one touched endpoint and ``vartheta_F`` the smallest
    conformal angle of a critical edge touching the support.
    """
    g = regularize(graph_cr)
    vals = F.values(g)
    require_nonzero(vals)
    touched = np.flatnonzero(np.abs(vals) > 0)
    M = difference_quotient_max(g.z, vals, touched)
    mask = np.isin(g.edges, touched).any(axis=1)
    th = np.where(np.isnan(g.theta_n), g.theta_s, np.where(np.isnan(g.theta_s), g.theta_n, g.theta))
    vartheta = float(np.min(th[mask]))
    eps_F = math.sin(vartheta) / (2.0 * M * (1.0 + M))
    out = Thresholds(M, 1.0 / M, vartheta, eps_F)
    if isinstance(F, SmoothField):
        Mc = F.check_bounds()
        tc = float(np.nanmin(np.where(g.interior_edge_mask, g.theta, np.nan)))
        out.M_check, out.theta_check = Mc, tc
        out.eps_check = math.sin(tc) / (2.0 * Mc * (1.0 + Mc))
    return out


def deformed_positions(graph: PolyhedralGraph, F: Field, eps: float) -> np.ndarray:
    return graph.z + eps * F.values(graph)


# ----------------------------------------------------------------------------
# deform


@dataclass
class FlipReport:
    eps: float
    lost: list = field(default_factory=list)
    gained: list = field(default_factory=list)
    chords: list = field(default_factory=list)

    @property
    def flipped(self) -> list:
        c = set(self.chords)
        return [e for e in self.gained if e not in c]

    def rows(self):
        for e in self.lost:
            yield ("lost", *e)
        for e in self.gained:
            yield ("chord" if e in set(self.chords) else "gained", *e)


def _region_locator(graph: PolyhedralGraph):
    """Return a function telling which query points lie in the union of the faces."""
    cent = np.array([np.mean(graph.z[list(f)]) for f in graph.faces])
    reach = float(np.max([np.max(np.abs(graph.z[list(f)] - c)) for f, c in zip(graph.faces, cent)]))
    tree = cKDTree(np.column_stack([cent.real, cent.imag]))

    def inside(p: complex) -> bool:
        for fi in tree.query_ball_point([p.real, p.imag], reach + 1e-9):
            pts = graph.z[list(graph.faces[fi])]
            e = np.roll(pts, -1) - pts
            if np.all((np.conj(e) * (p - pts)).imag >= -1e-12):
                return True
        return False

    return inside


def deform(graph_cr: PolyhedralGraph, F: Field, eps: float, check: bool = True, _inside=None):
    """Fresh Delaunay graph of the displaced vertices, clipped to the original window.

    Returns ``(graph_eps, FlipReport)``. The report lists critical edges missing from
    the deformed graph, and new edges (with those inside an original cocyclic face
    marked as chords).
    """
    g = regularize(graph_cr)
    vals = F.values(g)
    if check and eps > 0:
        touched = np.flatnonzero(np.abs(vals) > 0)
        if len(touched):
            M = difference_quotient_max(g.z, vals, touched)
            if eps * M >= 1.0:
                raise InjectivityViolated(f"eps = {eps} is not below 1/M_F = {1.0 / M}")
    z = g.z + eps * vals
    # a far ring of guard points keeps collinear rim vertices off the convex hull
    mid = 0.5 * (z.real.min() + z.real.max()) + 0.5j * (z.imag.min() + z.imag.max())
    span = max(np.ptp(z.real), np.ptp(z.imag), 1.0)
    guard = mid + 2.0 * span * np.exp(2j * np.pi * (np.arange(7) + 0.5) / 7)
    raw = delaunay_from_points(np.concatenate([z, guard]), meta=dict(g.meta, eps=eps))
    inside = _inside or _region_locator(g)
    n = g.n_vertices
    keep = [f for f in raw.faces if max(f) < n and inside(complex(np.mean(g.z[list(f)])))]
    ge = PolyhedralGraph(z, keep, g.ids, raw.meta, raw.tol)
    old, new = _edge_set(g), _edge_set(ge)
    face_of = {}
    for fi, f in enumerate(g.faces):
        for v in f:
            face_of.setdefault(v, set()).add(fi)
    rep = FlipReport(eps, sorted(old - new), sorted(new - old))
    rep.chords = [e for e in rep.gained if face_of.get(e[0], set()) & face_of.get(e[1], set())]
    return ge, rep


# ----------------------------------------------------------------------------
# limit graph


def _dq(z, vals, a, b):
    return (vals[a] - vals[b]) / (z[a] - z[b])


def theta_series(z, vals, u, v, n, s, order: int = 4) -> np.ndarray:
    """Taylor coefficients ``c_k`` of ``2 theta_eps(uv) = sum c_k eps^k`` in a cocyclic quad.

    The quad is ``(u, s, v, n)`` counter-clockwise; positive means ``uv`` is legal.
    """
    d = [_dq(z, vals, u, n), _dq(z, vals, v, s), _dq(z, vals, u, s), _dq(z, vals, v, n)]
    sgn = [1, 1, -1, -1]
    out = np.zeros(order)
    for k in range(1, order + 1):
        tot = sum(sg * dd ** k for sg, dd in zip(sgn, d))
        out[k - 1] = (-1) ** (k + 1) / k * tot.imag
    return out


def theta_exact(z, vals, eps, u, v, n, s) -> float:
    """Conformal-angle sum ``theta_n + theta_s`` of uv in the deformed quad (u, s, v, n)."""
    ze = z + eps * vals
    cr = (ze[u] - ze[n]) * (ze[v] - ze[s]) / ((ze[u] - ze[s]) * (ze[v] - ze[n]))
    return math.remainder(math.atan2(cr.imag, cr.real) - math.pi, 2 * math.pi)


def _sign(z, vals, u, v, n, s, scale, tol=1e-11) -> int:
    c = theta_series(z, vals, u, v, n, s)
    for k, ck in enumerate(c, start=1):
        if abs(ck) > tol * max(scale, 1e-300) ** k:
            return 1 if ck > 0 else -1
    if scale == 0:
        return 0
    for e in (0.05 / scale, 0.2 / scale):
        if abs(theta_exact(z, vals, e, u, v, n, s)) > 1e-10:
            raise DegenerateQuartic(f"quad {(u, s, v, n)}: four derivatives vanish but the angle does not")
    return 0


def _triangulate_cocyclic(z, vals, face, scale):
    """Triangulation of a cocyclic polygon that the field selects as eps -> 0+.

    Lawson flips under the sign of the first nonvanishing derivative of the conformal
    angle. Diagonals whose angle stays zero are removed again, leaving merged faces.
    """
    tris = [tuple(t) for t in fan(face)]
    for _ in range(10 * len(face) ** 2):
        half = {}
        for ti, t in enumerate(tris):
            for k in range(3):
                half[(t[k], t[(k + 1) % 3])] = ti
        flipped = False
        ties = []
        for (a, b), ti in half.items():
            tj = half.get((b, a))
            if tj is None or a > b:
                continue
            c = [x for x in tris[ti] if x not in (a, b)][0]
            d = [x for x in tris[tj] if x not in (a, b)][0]
            sg = _sign(z, vals, a, b, c, d, scale)
            if sg < 0:
                tris[ti] = (c, d, b) if _ccw(z, c, d, b) else (c, b, d)
                tris[tj] = (d, c, a) if _ccw(z, d, c, a) else (d, a, c)
                flipped = True
                break
            if sg == 0:
                ties.append((ti, tj))
        if not flipped:
            break
    groups = _union(len(tris), ties)
    if all(len(gp) == 1 for gp in groups):
        return tris
    return merge_faces(tris, [gp for gp in groups if len(gp) > 1]) + [tris[gp[0]] for gp in groups if len(gp) == 1]


def _ccw(z, a, b, c) -> bool:
    return ((z[b] - z[a]).conjugate() * (z[c] - z[a])).imag > 0


def _union(n, pairs):
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    out = {}
    for i in range(n):
        out.setdefault(find(i), []).append(i)
    return list(out.values())


def limit_graph(graph_cr: PolyhedralGraph, F: Field) -> PolyhedralGraph:
    """Critical graph plus the chords that the field selects inside each cocyclic face."""
    g = regularize(graph_cr)
    vals = F.values(g)
    require_nonzero(vals)
    touched = np.flatnonzero(np.abs(vals) > 0)
    scale = difference_quotient_max(g.z, vals, touched)
    faces = []
    for f in g.faces:
        if len(f) == 3 or not np.any(np.abs(vals[list(f)]) > 0):
            faces.append(tuple(f))
        else:
            faces.extend(tuple(t) for t in _triangulate_cocyclic(g.z, vals, list(f), scale))
    meta = dict(g.meta, limit_of=F.to_json() if hasattr(F, "to_json") else None)
    return PolyhedralGraph(g.z, faces, g.ids, meta, g.tol)


def probe_limit_graph(graph_cr: PolyhedralGraph, F: Field, eps: float = 1e-5) -> PolyhedralGraph:
    """Limit graph read off a fresh Delaunay construction at a small ``eps``.

    Much smaller values push the off-circle motion below the cocyclicity tolerance.
    """
    g = regularize(graph_cr)
    ge, _ = deform(g, F, eps, check=False)
    return PolyhedralGraph(g.z, ge.faces, g.ids, g.meta, g.tol)


# ----------------------------------------------------------------------------
# back-deformation and the area factor


def back_deform(graph_eps: PolyhedralGraph, z_cr) -> PolyhedralGraph:
    """Faces of the deformed graph placed back on the critical positions."""
    return PolyhedralGraph(np.asarray(z_cr), graph_eps.faces, graph_eps.ids, graph_eps.meta, graph_eps.tol)


def area_factor(graph_back: PolyhedralGraph, vals, eps: float) -> np.ndarray:
    """``D(eps; F) = 1 + eps (dF + dbar conj F) + eps^2 (dF dbar conj F - dbar F d conj F)``."""
    N = nabla(graph_back)
    vals = np.asarray(vals, dtype=complex)
    dF = N @ vals
    dbF = N.conj() @ vals
    dFc = N @ vals.conj()
    dbFc = N.conj() @ vals.conj()
    return (1 + eps * (dF + dbFc) + eps ** 2 * (dF * dbFc - dbF * dFc)).real


# ----------------------------------------------------------------------------
# radius bounds


@dataclass
class RadiusBounds:
    eps: float
    R0: float
    r_plus: float
    r_minus: float
    eps_max: float
    m1bar: float
    m2bar: float


def eps_max(R0: float, M1: float, M2: float) -> float:
    """Blow-up point of the upper envelope."""
    if M2 == 0:
        return 1.0 / (2.0 * M1)
    return (1.0 - (1.0 + M1 / (2.0 * R0 * M2)) ** -0.25) / (2.0 * M1)


def radius_bounds(eps: float, R0: float, M1: float, M2: float) -> RadiusBounds:
    """Closed-form envelope ``[R_-, R_+]`` for the circumradius of a tracked face.

    Both ends solve ``R' = +-(4 M1bar R + 16 M2bar R^2)`` exactly, with
    ``M1bar = M1 / s`` and ``M2bar = M2 / s^3``, ``s = 1 - 2 M1 eps``.
    """
    em = eps_max(R0, M1, M2)
    if eps < 0 or eps >= em:
        raise EpsilonBeyondMax(f"eps = {eps} outside [0, {em})")
    s = 1.0 - 2.0 * M1 * eps
    a = M2 * R0 / M1
    r_plus = R0 / ((1.0 + 2.0 * a) * s * s - 2.0 * a / (s * s))
    r_minus = R0 * s * s / (1.0 + 8.0 * a * math.log(1.0 / s))
    return RadiusBounds(eps, R0, r_plus, r_minus, em, M1 / s, M2 / s ** 3)


def radius_bounds_ode(eps: float, R0: float, M1: float, M2: float):
    """Numerical solutions of the two saturating ODEs ``R' = +-(4 M1bar R + 16 M2bar R^2)``."""

    def rhs(sign):
        def f(t, r):
            s = 1.0 - 2.0 * M1 * t
            return sign * (4.0 * M1 / s * r + 16.0 * M2 / s ** 3 * r * r)
        return f

    if eps == 0:
        return R0, R0
    up = solve_ivp(rhs(1.0), (0.0, eps), [R0], rtol=1e-11, atol=1e-14)
    dn = solve_ivp(rhs(-1.0), (0.0, eps), [R0], rtol=1e-11, atol=1e-14)
    return float(up.y[0, -1]), float(dn.y[0, -1])


# ----------------------------------------------------------------------------
# sweeps


@dataclass
class SweepStep:
    eps: float
    graph: PolyhedralGraph
    report: FlipReport
    R0: np.ndarray
    bounds: RadiusBounds | None = None
    violations: list = field(default_factory=list)


def sweep(graph_cr: PolyhedralGraph, F: Field, eps_grid, M1=None, M2=None, check_bounds: bool = True):
    """Deform along an increasing eps grid, tracking faces by circumcenter continuity.

    Every face inherits the initial circumradius of the face it descends from. When
    bounds are known each radius is checked against ``[R_-, R_+]``.
    """
    g = regularize(graph_cr)
    inside = _region_locator(g)
    if M1 is None and isinstance(F, SmoothField):
        M1, M2 = F.bounds()
    prev_c = g.center
    prev_sets = [set(f) for f in g.faces]
    prev_R0 = g.radius.copy()
    steps = []
    for eps in eps_grid:
        ge, rep = deform(g, F, float(eps), check=False, _inside=inside)
        tree = cKDTree(np.column_stack([prev_c.real, prev_c.imag]))
        dist, idx = tree.query(np.column_stack([ge.center.real, ge.center.imag]), k=min(3, len(prev_c)))
        dist = np.atleast_2d(dist.T).T if dist.ndim == 1 else dist
        idx = np.atleast_2d(idx.T).T if idx.ndim == 1 else idx
        R0 = np.empty(ge.n_faces)
        for fi, f in enumerate(ge.faces):
            cand = [j for d, j in zip(dist[fi], idx[fi]) if d <= dist[fi][0] + 1e-9]
            j = max(cand, key=lambda c: len(prev_sets[c] & set(f)))
            R0[fi] = prev_R0[j]
        st = SweepStep(float(eps), ge, rep, R0)
        if check_bounds and M1 is not None and eps > 0:
            for fi in range(ge.n_faces):
                b = radius_bounds(float(eps), float(R0[fi]), M1, M2)
                r = ge.radius[fi]
                if r > b.r_plus * (1 + 1e-9) or r < b.r_minus * (1 - 1e-9):
                    st.violations.append((fi, float(r), b.r_minus, b.r_plus))
            st.bounds = radius_bounds(float(eps), 1.0, M1, M2)
        steps.append(st)
        prev_c, prev_sets, prev_R0 = ge.center, [set(f) for f in ge.faces], R0
    return steps


def eps_tilde(graph_cr: PolyhedralGraph, F: Field, eps_hi: float | None = None,
              grid: int = 24, iters: int = 40) -> float:
    """Empirical stability threshold: the first eps where the edge set leaves that of
    the limit graph, located on a grid and refined by bisection."""
    g = regularize(graph_cr)
    inside = _region_locator(g)
    ref = _edge_set(limit_graph(g, F))
    th = thresholds(g, F)
    hi = 0.5 * th.eps_inject if eps_hi is None else eps_hi

    def same(e):
        ge, _ = deform(g, F, e, check=False, _inside=inside)
        return _edge_set(ge) == ref

    ts = np.linspace(0, hi, grid + 1)[1:]
    bad = next((t for t in ts if not same(t)), None)
    if bad is None:
        return float(hi)
    lo = float(ts[np.searchsorted(ts, bad) - 1]) if bad > ts[0] else 0.0
    # shrink lo until it is stable
    while lo > 0 and not same(lo):
        lo *= 0.5
    hi_b = float(bad)
    for _ in range(iters):
        mid = 0.5 * (lo + hi_b)
        if same(mid):
            lo = mid
        else:
            hi_b = mid
    return lo


# ----------------------------------------------------------------------------
# curvature and the derivative gap


def gauss_curvatures(graph: PolyhedralGraph) -> np.ndarray:
    """Cone-angle defect ``2 pi - sum (pi - 2 theta)`` of each interior face (NaN on the rim)."""
    out = np.full(graph.n_faces, np.nan)
    for fi in range(graph.n_faces):
        if graph.face_is_interior(fi):
            out[fi] = 0.5 * face_curvature(graph, fi)
    return out


def nabla_vs_partial_gap(tri: PolyhedralGraph, phi, dphi, sup_dd: float, sup_ddb: float, sup_dbdb: float) -> float:
    """``max_f |nabla phi(f) - d phi(o_f)| - R(f) (1.5 a + 2 b + 0.5 c)``; nonpositive when the
    derivative estimate holds."""
    vals = np.asarray(phi(tri.z), dtype=complex)
    got = nabla(tri) @ vals
    want = np.asarray(dphi(tri.center), dtype=complex)
    gap = np.abs(got - want) - tri.radius * (1.5 * sup_dd + 2.0 * sup_ddb + 0.5 * sup_dbdb)
    return float(np.max(gap))
