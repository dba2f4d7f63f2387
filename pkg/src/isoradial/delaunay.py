"""Delaunay construction, isoradial lattice windows, and triangular completion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay as _Qhull, cKDTree

from .errors import AllCollinear, DuplicatePoints, InvalidAngles
from .geometry import TOL_GEOM, PolyhedralGraph, circumcenter3, merge_faces

# ----------------------------------------------------------------------------
# triangulation of point sets


def _incircle(a, b, c, d) -> float:
    """Positive when d lies inside the circle through the ccw triangle a, b, c."""
    ad, bd, cd = a - d, b - d, c - d
    m = np.array([
        [ad.real, ad.imag, abs(ad) ** 2],
        [bd.real, bd.imag, abs(bd) ** 2],
        [cd.real, cd.imag, abs(cd) ** 2],
    ])
    return float(np.linalg.det(m))


def _lawson(z, tris, tol):
    """Flip edges until every interior edge is locally Delaunay (up to ``tol``)."""
    tris = [list(t) for t in tris]
    while True:
        half = {}
        for ti, t in enumerate(tris):
            for s in range(3):
                half[(t[s], t[(s + 1) % 3])] = ti
        flipped = False
        for (a, b), ti in list(half.items()):
            tj = half.get((b, a))
            if tj is None or ti > tj:
                continue
            t, u = tris[ti], tris[tj]
            c = [v for v in t if v not in (a, b)][0]
            d = [v for v in u if v not in (a, b)][0]
            scale = max(abs(z[a] - z[c]), abs(z[b] - z[c]), abs(z[d] - z[c])) ** 4
            # (a, b, c) is ccw since a->b is an edge of t
            if _incircle(z[a], z[b], z[c], z[d]) > tol * scale:
                tris[ti] = [c, a, d]
                tris[tj] = [d, b, c]
                flipped = True
                break
        if not flipped:
            return tris


def delaunay_from_points(points, tol: float = TOL_GEOM, meta=None) -> PolyhedralGraph:
    """Chordless Delaunay graph of a point set.

    Qhull supplies a first triangulation, Lawson flips clean up any edge it got wrong
    under our own in-circle test, and triangles with a common circumcircle are merged.
    """
    z = np.asarray(points, dtype=complex)
    if len(z) < 3:
        raise AllCollinear("need at least three points")
    pts = np.column_stack([z.real, z.imag])
    tree = cKDTree(pts)
    span = float(np.ptp(pts, axis=0).max())
    if tree.query_pairs(1e-12 * max(span, 1.0)):
        raise DuplicatePoints("points must be pairwise distinct")
    d = z - z[0]
    far = int(np.argmax(np.abs(d)))
    if np.all(np.abs((d * np.conj(d[far])).imag) <= 1e-12 * abs(d[far]) ** 2):
        raise AllCollinear("all points lie on one line")
    qh = _Qhull(pts, qhull_options="Qbb Qc Qz Q12 Qt")
    if len(qh.coplanar):
        missing = sorted(set(int(i) for i in qh.coplanar[:, 0]))
        raise DuplicatePoints(f"points {missing[:5]} were dropped by the triangulator")
    tris = []
    for t in qh.simplices:
        a, b, c = (int(v) for v in t)
        if ((z[b] - z[a]).conjugate() * (z[c] - z[a])).imag < 0:
            b, c = c, b
        tris.append((a, b, c))
    tris = _lawson(z, tris, 1e-13)
    tris = _peel_slivers(z, tris, tol)
    return merge_cocyclic(z, tris, tol, meta=meta)


def _peel_slivers(z, tris, tol):
    """Drop rim triangles flatter than ``tol``.

    Hull points that are collinear up to ``tol`` produce slivers with enormous
    circumcircles whose in-circle status is decided by round-off alone.
    """
    tris = [tuple(t) for t in tris]
    while True:
        half = {}
        for t in tris:
            for s in range(3):
                half[(t[s], t[(s + 1) % 3])] = t
        drop = set()
        for (a, b), t in half.items():
            if (b, a) in half:
                continue
            c = [v for v in t if v not in (a, b)][0]
            e = z[b] - z[a]
            height = abs((e.conjugate() * (z[c] - z[a])).imag) / abs(e)
            if height < tol:
                drop.add(t)
        if not drop:
            return tris
        tris = [t for t in tris if t not in drop]


def merge_cocyclic(z, tris, tol: float = TOL_GEOM, meta=None) -> PolyhedralGraph:
    centers = []
    for a, b, c in tris:
        try:
            centers.append(circumcenter3(z[a], z[b], z[c]))
        except Exception:
            centers.append(complex(np.inf, np.inf))
    half = {}
    for ti, t in enumerate(tris):
        for s in range(3):
            half[(t[s], t[(s + 1) % 3])] = ti
    parent = list(range(len(tris)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (a, b), ti in half.items():
        tj = half.get((b, a))
        if tj is not None and ti < tj and abs(centers[ti] - centers[tj]) <= tol:
            x, y = find(ti), find(tj)
            if x != y:
                parent[max(x, y)] = min(x, y)
    groups = {}
    for ti in range(len(tris)):
        groups.setdefault(find(ti), []).append(ti)
    multi = [g for g in groups.values() if len(g) > 1]
    faces = merge_faces(tris, multi)
    faces = sorted(_canon(f) for f in faces)
    return PolyhedralGraph(z, faces, meta=meta, tol=tol)


def _canon(f):
    f = tuple(int(v) for v in f)
    s = f.index(min(f))
    return f[s:] + f[:s]


# ----------------------------------------------------------------------------
# completion


def triangulate_faces(graph: PolyhedralGraph, choice: dict | None = None) -> PolyhedralGraph:
    """Replace every k-gon by triangles.

    ``choice`` maps a face index to an explicit list of triangles (vertex triples in ccw
    order); other faces are fanned from their lowest-id vertex.
    """
    choice = choice or {}
    faces = []
    for fi, f in enumerate(graph.faces):
        if fi in choice:
            faces.extend(tuple(t) for t in choice[fi])
        elif len(f) == 3:
            faces.append(f)
        else:
            faces.extend(fan(f, graph.ids))
    faces = sorted(_canon(f) for f in faces)
    return PolyhedralGraph(graph.z, faces, graph.ids, graph.meta, graph.tol)


def fan(f, ids=None):
    ids = ids if ids is not None else list(range(max(f) + 1))
    s = min(range(len(f)), key=lambda i: ids[f[i]])
    c = f[s:] + f[:s]
    return [(c[0], c[j], c[j + 1]) for j in range(1, len(c) - 1)]


def complete_to_triangulation(graph: PolyhedralGraph) -> PolyhedralGraph:
    """Fan every non-triangular face from its lowest-id vertex."""
    if graph.is_triangulation():
        return graph
    return triangulate_faces(graph)


# ----------------------------------------------------------------------------
# lattice windows


# a generic cyclic quadrilateral, used when no angles are given
QUAD_EXAMPLE = (math.pi / 3, 5 * math.pi / 7, 13 * math.pi / 9, 21 * math.pi / 11)


@dataclass
class LatticeSpec:
    kind: str = "square"
    window: float = 5
    params: dict = field(default_factory=dict)

    def angles(self):
        if self.kind == "square":
            return (math.pi / 4, 3 * math.pi / 4, 5 * math.pi / 4, 7 * math.pi / 4)
        if self.kind == "triangular":
            return (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3)
        alpha = tuple(float(a) for a in self.params.get("alpha", ()))
        if self.kind == "quad_tiling" and not alpha:
            alpha = QUAD_EXAMPLE
        if self.kind == "quad_tiling" and len(alpha) != 4:
            raise InvalidAngles("quad_tiling needs four angles")
        if self.kind == "custom_rhombic" and len(alpha) not in (3, 4):
            raise InvalidAngles("custom_rhombic needs three or four angles")
        if self.kind not in ("quad_tiling", "custom_rhombic"):
            raise InvalidAngles(f"unknown lattice kind {self.kind!r}")
        return alpha


def check_cell_angles(alpha):
    a = list(alpha)
    if any(a[i + 1] <= a[i] for i in range(len(a) - 1)) or a[-1] - a[0] >= 2 * math.pi:
        raise InvalidAngles("angles must be strictly increasing within one turn")
    gaps = [a[i + 1] - a[i] for i in range(len(a) - 1)] + [2 * math.pi - (a[-1] - a[0])]
    if max(gaps) >= math.pi - 1e-12:
        raise InvalidAngles("the circumcenter must lie strictly inside the cell polygon")


def generate_lattice(spec: LatticeSpec) -> PolyhedralGraph:
    """Isoradial window tiled by a cyclic polygon and its point reflection.

    The polygon has its vertices at ``exp(i*alpha_k)`` on the unit circle. Copies sit at
    the points of the lattice spanned by two vertex differences; reflected copies share
    the edge between vertices 1 and 2. The window keeps every vertex inside a square of
    half-width ``window`` times the typical cell length, and every face whose vertices
    are all kept. A vertex sits at the origin.
    """
    alpha = spec.angles()
    check_cell_angles(alpha)
    w = np.exp(1j * np.array(alpha))
    k = len(w)
    if k == 4:
        a, b = w[0] - w[2], w[1] - w[3]
        # vertex classes: 0 <- w1 (== w3 + a), 1 <- w2 (== w4 + b)
        base = [w[0], w[1]]
        tile = [(0, 0, 0), (1, 0, 0), (0, -1, 0), (1, 0, -1)]
        optile = [(1, 0, 0), (0, 0, 0), (1, 1, 0), (0, 0, 1)]
    else:
        a, b = w[0] - w[2], w[1] - w[2]
        base = [w[2]]
        tile = [(0, 1, 0), (0, 0, 1), (0, 0, 0)]
        optile = [(0, 0, 1), (0, 1, 0), (0, 1, 1)]
    # the reflected copy lists its vertices as center - w_k, k in order
    cell_area = abs((a.conjugate() * b).imag)
    s = math.sqrt(cell_area / 2.0)
    half = float(spec.window) * s + 1e-9
    shift = w[0] if k == 4 else w[2]
    reach = int(math.ceil((half + 4.0) / (min(abs(a), abs(b)) * abs(math.sin(np.angle(b / a)))))) + 2
    labels = {}
    faces = []

    def pos(lab):
        c, i, j = lab
        return base[c] + i * a + j * b - shift

    for i in range(-reach, reach + 1):
        for j in range(-reach, reach + 1):
            for pattern in (tile, optile):
                labs = [(c, i + di, j + dj) for c, di, dj in pattern]
                ps = [pos(l) for l in labs]
                if all(abs(p.real) <= half and abs(p.imag) <= half for p in ps):
                    faces.append(labs)
                    for l in labs:
                        labels.setdefault(l, pos(l))
    order = sorted(labels, key=lambda l: (round(labels[l].imag, 9), round(labels[l].real, 9)))
    index = {l: n for n, l in enumerate(order)}
    z = np.array([labels[l] for l in order])
    # snap round-off so the origin vertex is exact
    z = np.where(np.abs(z) < 1e-13, 0, z)
    fs = sorted(_canon([index[l] for l in f]) for f in faces)
    meta = {
        "isoradius": 1.0,
        "kind": spec.kind,
        "window": spec.window,
        "alpha": [float(x) for x in alpha],
        "lattice": [[float(a.real), float(a.imag)], [float(b.real), float(b.imag)]],
        "labels": [list(l) for l in order],
    }
    return PolyhedralGraph(z, fs, meta=meta)


def lattice(kind: str = "square", window: float = 5, alpha=None) -> PolyhedralGraph:
    params = {"alpha": list(alpha)} if alpha is not None else {}
    return generate_lattice(LatticeSpec(kind, window, params))


def nearest_vertex(graph: PolyhedralGraph, point: complex) -> int:
    return int(np.argmin(np.abs(graph.z - point)))


def crop(graph: PolyhedralGraph, keep) -> PolyhedralGraph:
    """Sub-window made of the faces whose vertices all satisfy ``keep(z)``.

    Vertices are renumbered in their original order; lattice labels follow along.
    """
    mask = np.asarray(keep(graph.z), dtype=bool)
    faces = [f for f in graph.faces if all(mask[v] for v in f)]
    used = sorted({v for f in faces for v in f})
    new = {v: k for k, v in enumerate(used)}
    meta = dict(graph.meta)
    if meta.get("labels"):
        meta["labels"] = [meta["labels"][v] for v in used]
    return PolyhedralGraph(graph.z[used], [[new[v] for v in f] for f in faces],
                           [graph.ids[v] for v in used], meta, graph.tol)
