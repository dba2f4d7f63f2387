"""Embedded planar graphs with cyclic faces and their per-face / per-edge geometry."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BoundaryEdge,
    BoundaryFace,
    CollinearFace,
    GeometryError,
    NonCocyclic,
)

TOL_GEOM = 1e-9
TOL_AREA = 1e-14


def polygon_area(pts) -> float:
    """Signed shoelace area; positive for counter-clockwise cycles."""
    p = np.asarray(pts, dtype=complex)
    return 0.5 * float(np.sum((p.conj() * np.roll(p, -1)).imag))


def circumcenter3(a: complex, b: complex, c: complex) -> complex:
    # translate to a for accuracy
    b = b - a
    c = c - a
    d = 2.0 * (b.conjugate() * c).imag
    if d == 0.0:
        raise CollinearFace("collinear points have no circumcircle")
    return a - 1j * (abs(b) ** 2 * c - abs(c) ** 2 * b) / d


def circumdata(face_vertices, tol: float = TOL_GEOM):
    """Return ``(center, radius, area)`` of a cyclic polygon given in counter-clockwise order."""
    p = np.asarray(face_vertices, dtype=complex)
    k = len(p)
    if k < 3:
        raise CollinearFace("a face needs at least three vertices")
    area = polygon_area(p)
    scale = max(1.0, float(np.max(np.abs(p - p[0]))))
    if area <= TOL_AREA * scale * scale:
        raise CollinearFace(f"face area {area:.3e} is not positive")
    # the three most spread-out vertices give the best-conditioned circle
    i, j, m = 0, k // 3, (2 * k) // 3
    center = circumcenter3(p[i], p[j], p[m])
    dist = np.abs(p - center)
    radius = float(np.mean(dist))
    if k > 3 and float(np.max(np.abs(dist - radius))) > tol:
        raise NonCocyclic(f"vertices deviate from circumcircle by {np.max(np.abs(dist - radius)):.3e}")
    return complex(center), radius, float(area)


def inscribed_tan(za: complex, zb: complex, zw: complex) -> float:
    """tan of the north angle of the oriented edge a->b seen from the third vertex w."""
    q = (zb - zw) / (za - zw)
    return q.real / q.imag


def north_angle(za: complex, zb: complex, zw: complex) -> float:
    """Signed half-angle at a of the kite a, o, b where o is the circumcenter of (a, b, w)."""
    q = (zb - zw) / (za - zw)
    return 0.5 * math.pi - math.atan2(q.imag, q.real)


@dataclass(frozen=True)
class EdgeGeometry:
    theta_n: float
    theta_s: float
    theta: float
    is_chord: bool


@dataclass
class ValidationReport:
    mode: str
    violations: list = field(default_factory=list)
    radius_violations: list = field(default_factory=list)
    bad_faces: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.violations or self.radius_violations or self.bad_faces)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ok": self.ok,
            "violations": [list(map(int, v)) for v in self.violations],
            "radius_violations": [int(f) for f in self.radius_violations],
            "bad_faces": [int(f) for f in self.bad_faces],
        }


class PolyhedralGraph:
    """A finite window of an embedded planar graph.

    Vertices are indexed ``0..n-1`` with complex positions ``z``; ``ids`` keeps the
    external labels used in files. Faces are counter-clockwise index cycles. The outer
    region is not a face, so edges on the window rim have a single side.
    """

    def __init__(self, z, faces, ids=None, meta=None, tol: float = TOL_GEOM):
        self.z = np.asarray(z, dtype=complex).copy()
        self.z.setflags(write=False)
        n = len(self.z)
        self.ids = list(range(n)) if ids is None else [int(i) for i in ids]
        self.faces = tuple(tuple(int(v) for v in f) for f in faces)
        self.meta = dict(meta or {})
        self.tol = tol
        half = {}
        for fi, f in enumerate(self.faces):
            k = len(f)
            if k < 3 or len(set(f)) != k:
                raise GeometryError(f"face {fi} is not a simple cycle")
            for s in range(k):
                key = (f[s], f[(s + 1) % k])
                if key in half:
                    raise GeometryError(f"oriented edge {key} is used by two faces")
                half[key] = fi
        self.half = half
        geo = []
        for f in self.faces:
            try:
                geo.append(circumdata(self.z[list(f)], tol))
            except NonCocyclic as exc:
                raise NonCocyclic(f"face {f}: {exc}") from None
        self.center = np.array([g[0] for g in geo], dtype=complex)
        self.radius = np.array([g[1] for g in geo])
        self.area = np.array([g[2] for g in geo])
        for a in (self.center, self.radius, self.area):
            a.setflags(write=False)

    # ----- combinatorics -------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.z)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edges as sorted ``(u, v)`` rows with ``u < v``."""
        es = sorted({(min(a, b), max(a, b)) for a, b in self.half})
        return np.array(es, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def edge_index(self) -> dict:
        return {(int(u), int(v)): e for e, (u, v) in enumerate(self.edges)}

    def north_face(self, u: int, v: int):
        """Face on the left of u->v, or None on the rim."""
        return self.half.get((u, v))

    def south_face(self, u: int, v: int):
        return self.half.get((v, u))

    @cached_property
    def boundary_vertices(self) -> frozenset:
        out = set()
        for a, b in self.half:
            if (b, a) not in self.half:
                out.update((a, b))
        return frozenset(out)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.n_vertices, dtype=bool)
        used = set(v for f in self.faces for v in f)
        for v in used:
            m[v] = v not in self.boundary_vertices
        m.setflags(write=False)
        return m

    @cached_property
    def interior_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask)

    @cached_property
    def vertex_faces(self) -> list:
        out = [[] for _ in range(self.n_vertices)]
        for fi, f in enumerate(self.faces):
            for v in f:
                out[v].append(fi)
        return out

    @cached_property
    def halfedges(self):
        """Arrays ``(a, b, w, f)``: each oriented edge a->b, the vertex after b in its
        north face, and that face."""
        rows = []
        for fi, f in enumerate(self.faces):
            k = len(f)
            for s in range(k):
                rows.append((f[s], f[(s + 1) % k], f[(s + 2) % k], fi))
        arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
        return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]

    @cached_property
    def halfedge_tan(self) -> np.ndarray:
        """tan of the north angle of every half-edge (same order as ``halfedges``)."""
        a, b, w, _ = self.halfedges
        q = (self.z[b] - self.z[w]) / (self.z[a] - self.z[w])
        return q.real / q.imag

    @cached_property
    def halfedge_chord(self) -> np.ndarray:
        """True where the half-edge and its twin bound faces with one circumcircle."""
        a, b, _, f = self.halfedges
        out = np.zeros(len(a), dtype=bool)
        for i in range(len(a)):
            t = self.half.get((int(b[i]), int(a[i])))
            if t is not None and abs(self.center[t] - self.center[f[i]]) <= self.tol:
                out[i] = True
        return out

    def face_is_interior(self, fi: int) -> bool:
        f = self.faces[fi]
        k = len(f)
        return all((f[(s + 1) % k], f[s]) in self.half for s in range(k))

    def third_vertex(self, u: int, v: int) -> int:
        """Vertex following v in the face on the left of u->v."""
        fi = self.half[(u, v)]
        f = self.faces[fi]
        s = f.index(v)
        return f[(s + 1) % len(f)]

    # ----- angles ----------------------------------------------------------

    def side_angle(self, u: int, v: int, via=None) -> float:
        """North angle of u->v, computed with the third vertex ``via`` (default: the next one)."""
        if (u, v) not in self.half:
            raise BoundaryEdge(f"edge {u}->{v} has no north face")
        w = self.third_vertex(u, v) if via is None else via
        return north_angle(self.z[u], self.z[v], self.z[w])

    def edge_angles(self, u: int, v: int) -> EdgeGeometry:
        if (u, v) not in self.half or (v, u) not in self.half:
            raise BoundaryEdge(f"edge {u}-{v} lies on the rim")
        tn = self.side_angle(u, v)
        ts = self.side_angle(v, u)
        fn, fs = self.half[(u, v)], self.half[(v, u)]
        chord = abs(self.center[fn] - self.center[fs]) <= self.tol
        return EdgeGeometry(tn, ts, 0.5 * (tn + ts), bool(chord))

    @cached_property
    def _edge_table(self):
        es = self.edges
        tn = np.full(len(es), np.nan)
        ts = np.full(len(es), np.nan)
        chord = np.zeros(len(es), dtype=bool)
        for e, (u, v) in enumerate(es):
            u, v = int(u), int(v)
            if (u, v) in self.half:
                tn[e] = self.side_angle(u, v)
            if (v, u) in self.half:
                ts[e] = self.side_angle(v, u)
            if (u, v) in self.half and (v, u) in self.half:
                chord[e] = abs(self.center[self.half[(u, v)]] - self.center[self.half[(v, u)]]) <= self.tol
        for a in (tn, ts, chord):
            a.setflags(write=False)
        return tn, ts, chord

    @property
    def theta_n(self) -> np.ndarray:
        """North angles of the canonical orientation ``u -> v`` (NaN on the rim)."""
        return self._edge_table[0]

    @property
    def theta_s(self) -> np.ndarray:
        return self._edge_table[1]

    @property
    def theta(self) -> np.ndarray:
        return 0.5 * (self.theta_n + self.theta_s)

    @property
    def is_chord(self) -> np.ndarray:
        return self._edge_table[2]

    @cached_property
    def interior_edge_mask(self) -> np.ndarray:
        return ~(np.isnan(self.theta_n) | np.isnan(self.theta_s))

    def is_triangulation(self) -> bool:
        return all(len(f) == 3 for f in self.faces)

    # ----- derived graphs --------------------------------------------------

    def with_positions(self, z) -> "PolyhedralGraph":
        """Same combinatorics on new positions (faces need not stay Delaunay)."""
        return PolyhedralGraph(z, self.faces, self.ids, self.meta, self.tol)

    def to_json(self) -> dict:
        return {
            "vertices": [
                {"id": i, "x": float(c.real), "y": float(c.imag)} for i, c in zip(self.ids, self.z)
            ],
            "faces": [[self.ids[v] for v in f] for f in self.faces],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PolyhedralGraph":
        ids = [int(v["id"]) for v in doc["vertices"]]
        pos = {i: k for k, i in enumerate(ids)}
        z = [complex(v["x"], v["y"]) for v in doc["vertices"]]
        faces = [[pos[int(i)] for i in f] for f in doc["faces"]]
        return cls(z, faces, ids, doc.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "PolyhedralGraph":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def merge_faces(faces, groups):
    """Merge groups of face indices sharing edges into single polygons.

    Each group must form a topological disk. Returns the new face list; faces not named
    in any group are kept as they are.
    """
    faces = [tuple(f) for f in faces]
    in_group = {}
    for gi, g in enumerate(groups):
        for fi in g:
            in_group[fi] = gi
    out = [f for fi, f in enumerate(faces) if fi not in in_group]
    for g in groups:
        halves = set()
        for fi in g:
            f = faces[fi]
            for s in range(len(f)):
                halves.add((f[s], f[(s + 1) % len(f)]))
        rim = {a: b for a, b in halves if (b, a) not in halves}
        start = min(rim)
        cyc = [start]
        nxt = rim[start]
        while nxt != start:
            cyc.append(nxt)
            nxt = rim[nxt]
        if len(cyc) != len(rim):
            raise GeometryError("merged region is not a disk")
        out.append(tuple(cyc))
    return out


def regularize(graph: PolyhedralGraph) -> PolyhedralGraph:
    """Remove every chord by merging faces that share a circumcircle."""
    parent = list(range(graph.n_faces))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    chords = graph.is_chord
    for e in np.flatnonzero(chords):
        u, v = map(int, graph.edges[e])
        a, b = find(graph.half[(u, v)]), find(graph.half[(v, u)])
        if a != b:
            parent[max(a, b)] = min(a, b)
    groups = {}
    for fi in range(graph.n_faces):
        groups.setdefault(find(fi), []).append(fi)
    multi = [g for g in groups.values() if len(g) > 1]
    if not multi:
        return graph
    faces = merge_faces(graph.faces, multi)
    faces = [_rotate_min(f) for f in faces]
    faces.sort()
    return PolyhedralGraph(graph.z, faces, graph.ids, graph.meta, graph.tol)


def _rotate_min(f):
    s = f.index(min(f))
    return tuple(f[s:] + f[:s])


def face_curvature(graph: PolyhedralGraph, fi: int) -> float:
    """Conical defect ``4pi - 2 sum (pi - 2 theta)`` at the circumcenter of face ``fi``."""
    f = graph.faces[fi]
    k = len(f)
    total = 0.0
    for s in range(k):
        u, v = f[s], f[(s + 1) % k]
        if (v, u) not in graph.half:
            raise BoundaryFace(f"face {fi} touches the rim")
        total += math.pi - 2.0 * graph.edge_angles(u, v).theta
    return 4.0 * math.pi - 2.0 * total


def validate(graph: PolyhedralGraph, mode: str = "delaunay", radius: float | None = None,
             tol: float | None = None) -> ValidationReport:
    """Empty-circumdisk test for every face; in isoradial mode also compare radii.

    ``weak_delaunay`` flags vertices strictly inside a circumdisk. ``delaunay``
    also flags extra vertices on the circle (the face should have absorbed them).
    """
    if mode not in ("delaunay", "weak_delaunay", "isoradial"):
        raise ValueError(f"unknown mode {mode!r}")
    tol = graph.tol if tol is None else tol
    rep = ValidationReport(mode)
    pts = np.column_stack([graph.z.real, graph.z.imag])
    tree = cKDTree(pts)
    strict = mode == "weak_delaunay"
    for fi, f in enumerate(graph.faces):
        c, r = graph.center[fi], graph.radius[fi]
        reach = r + tol
        hits = tree.query_ball_point([c.real, c.imag], reach)
        fs = set(f)
        for v in sorted(hits):
            if v in fs:
                continue
            d = abs(graph.z[v] - c)
            if d < r - tol or (not strict and d <= r + tol):
                rep.violations.append((fi, v))
    if mode == "isoradial":
        r0 = float(graph.meta.get("isoradius", 1.0)) if radius is None else radius
        rep.radius_violations = [int(fi) for fi in np.flatnonzero(np.abs(graph.radius - r0) > tol)]
    return rep
