"""Rhombic (kite) graph of an isoradial graph: paths, moments, separating angles, tracks."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import Disconnected, NotIsoradial, WindowTooSmall
from .geometry import PolyhedralGraph, regularize

def _line_class(step: complex):
    """Split a unit step into (angle in (-pi/2, pi/2], sign)."""
    phi = math.atan2(step.imag, step.real)
    sign = 1
    if phi > math.pi / 2 + 1e-12:
        phi -= math.pi
        sign = -1
    elif phi <= -math.pi / 2 + 1e-12:
        phi += math.pi
        sign = -1
    return phi, sign


class RhombicGraph:
    """Bipartite graph on vertices (black, ``0..n-1``) and faces (white, ``n + f``).

    Every black-white edge is a unit step ``(z(o_f) - z(v)) / R``.
    """

    def __init__(self, graph: PolyhedralGraph, radius: float | None = None, tol: float = 1e-9):
        r0 = float(graph.meta.get("isoradius", np.mean(graph.radius))) if radius is None else radius
        if np.any(np.abs(graph.radius - r0) > tol):
            raise NotIsoradial("face circumradii differ from the common radius")
        if np.any(graph.is_chord):
            graph = regularize(graph)
        self.graph = graph
        self.radius = r0
        n = graph.n_vertices
        self.n_black = n
        self.adj = [[] for _ in range(n + graph.n_faces)]
        self.step = {}
        for fi, f in enumerate(graph.faces):
            w = n + fi
            for v in f:
                s = (graph.center[fi] - graph.z[v]) / r0
                s /= abs(s)
                self.adj[v].append(w)
                self.adj[w].append(v)
                self.step[(v, w)] = s
                self.step[(w, v)] = -s
        for a in self.adj:
            a.sort()
        self._classes = {}
        self._coords = None

    # ----- rhombi -----------------------------------------------------------

    def position(self, node: int) -> complex:
        if node < self.n_black:
            return complex(self.graph.z[node])
        return complex(self.graph.center[node - self.n_black])

    def rhombi(self):
        """Regular interior edges ``(u, v)``; one rhombus each."""
        g = self.graph
        return [tuple(map(int, e)) for e, ok in zip(g.edges, g.interior_edge_mask) if ok]

    def rhombus_sides(self, edge):
        u, v = edge
        g = self.graph
        fn, fs = g.half[(u, v)], g.half[(v, u)]
        n = self.n_black
        return [(u, n + fn), (v, n + fn), (v, n + fs), (u, n + fs)]

    def rhombus_angle(self, edge) -> float:
        u, v = edge
        g = self.graph
        fn, fs = g.half[(u, v)], g.half[(v, u)]
        a = (g.center[fn] - g.z[u])
        b = (g.center[fs] - g.z[u])
        return abs(math.atan2((b.conjugate() * a).imag, (b.conjugate() * a).real))

    # ----- paths ------------------------------------------------------------

    def find_path(self, u: int, v: int) -> list:
        """Breadth-first shortest path of alternating black/white nodes."""
        if u == v:
            return [u]
        prev = {u: None}
        queue = deque([u])
        while queue:
            x = queue.popleft()
            for y in self.adj[x]:
                if y not in prev:
                    prev[y] = x
                    if y == v:
                        path = [v]
                        while prev[path[-1]] is not None:
                            path.append(prev[path[-1]])
                        return path[::-1]
                    queue.append(y)
        raise Disconnected(f"no rhombic path from {u} to {v}")

    def steps(self, path) -> np.ndarray:
        return np.array([self.step[(path[i], path[i + 1])] for i in range(len(path) - 1)], dtype=complex)

    # ----- direction coordinates ---------------------------------------------

    def direction_class(self, step: complex) -> tuple:
        phi, sign = _line_class(step)
        for known, c in self._classes.items():
            if abs(known - phi) < 1e-7:
                return c, sign
            if abs(abs(known - phi) - math.pi) < 1e-7:
                return c, -sign
        self._classes[phi] = len(self._classes)
        return self._classes[phi], sign

    @property
    def coordinates(self) -> np.ndarray:
        """Integer lift of every node: signed step counts per direction class.

        Around each rhombus the four steps cancel in pairs, so the difference of two lifts
        is the net number of steps along each direction on any path between the nodes.
        """
        if self._coords is None:
            nn = len(self.adj)
            lift = [None] * nn
            for root in range(nn):
                if lift[root] is not None or not self.adj[root]:
                    continue
                lift[root] = {}
                queue = deque([root])
                while queue:
                    x = queue.popleft()
                    for y in self.adj[x]:
                        if lift[y] is None:
                            c, s = self.direction_class(self.step[(x, y)])
                            d = dict(lift[x])
                            d[c] = d.get(c, 0) + s
                            lift[y] = d
                            queue.append(y)
            ndir = len(self._classes)
            out = np.zeros((nn, ndir), dtype=np.int64)
            for x, d in enumerate(lift):
                if d:
                    for c, m in d.items():
                        out[x, c] = m
            self._coords = out
            self._component = _components(self.adj)
        return self._coords

    @property
    def directions(self) -> np.ndarray:
        """Angles (in (-pi/2, pi/2]) of the direction classes, in class order."""
        self.coordinates
        out = np.zeros(len(self._classes))
        for phi, c in self._classes.items():
            out[c] = phi
        return out

    def net_steps(self, u: int, v: int) -> np.ndarray:
        """Signed multiplicities of each direction class between two nodes."""
        coords = self.coordinates
        if self._component[u] != self._component[v]:
            raise WindowTooSmall(f"nodes {u} and {v} are not connected inside the window")
        return coords[v] - coords[u]


def _components(adj):
    comp = [-1] * len(adj)
    c = 0
    for s in range(len(adj)):
        if comp[s] >= 0:
            continue
        comp[s] = c
        queue = deque([s])
        while queue:
            x = queue.popleft()
            for y in adj[x]:
                if comp[y] < 0:
                    comp[y] = c
                    queue.append(y)
        c += 1
    return comp


def build_rhombic(graph: PolyhedralGraph) -> RhombicGraph:
    return RhombicGraph(graph)


# ----------------------------------------------------------------------------
# moments


@dataclass
class PathMoments:
    u: int
    v: int
    steps: np.ndarray
    p: dict = field(default_factory=dict)
    theta: list = field(default_factory=list)

    @property
    def p1(self) -> complex:
        return self.p[1]


def moments_from_steps(steps, max_n: int = 9) -> dict:
    steps = np.asarray(steps, dtype=complex)
    return {n: complex(np.sum(steps ** n)) for n in range(1, max_n + 1, 2)}


def path_moments(rg: RhombicGraph, path, max_n: int = 9) -> PathMoments:
    st = rg.steps(path)
    pm = PathMoments(path[0], path[-1], st, moments_from_steps(st, max_n))
    pm.theta = angles_from_net(rg.directions, rg.net_steps(path[0], path[-1]), pm.p[1]) if len(path) > 1 else []
    return pm


def angles_from_net(directions, net, p1: complex):
    """Turn signed direction counts into (angle, multiplicity) pairs around ``arg p1``.

    Each angle is reduced into ``(arg p1 - pi, arg p1 + pi]``.
    """
    theta0 = math.atan2(p1.imag, p1.real)
    out = []
    for phi, m in zip(directions, net):
        if m == 0:
            continue
        ang = phi if m > 0 else phi + math.pi
        ang = theta0 + math.remainder(ang - theta0, 2 * math.pi)
        out.append((ang, int(abs(m))))
    out.sort()
    return out


def separating_angles(rg: RhombicGraph, u: int, v: int):
    """Angles of the tracks separating u from v, with multiplicities.

    Raises ``WindowTooSmall`` if the window does not connect the two vertices or if
    the result violates the semi-circle property (a track left the window).
    """
    net = rg.net_steps(u, v)
    p1 = complex(rg.graph.z[v] - rg.graph.z[u]) / rg.radius
    theta = angles_from_net(rg.directions, net, p1)
    if theta:
        lo, hi = theta[0][0], theta[-1][0]
        t0 = math.atan2(p1.imag, p1.real)
        if hi - lo >= math.pi or not (lo - 1e-12 <= t0 <= hi + 1e-12):
            raise WindowTooSmall("separating angles do not fit in a half-circle")
    return theta


def moments_from_theta(theta, max_n: int = 9) -> dict:
    return {n: complex(sum(m * np.exp(1j * n * a) for a, m in theta)) for n in range(1, max_n + 1, 2)}


# ----------------------------------------------------------------------------
# train tracks


def train_track(rg: RhombicGraph, edge, side: int = 0):
    """Rhombi met by the track that crosses ``edge``'s rhombus through ``side`` (0..3).

    Sides 0 and 2 are parallel, as are 1 and 3. The walk runs in both directions until
    it leaves the window. Returns the rhombi in order along the track.
    """
    g = rg.graph
    n = rg.n_black

    def rhombi_on_side(sd):
        x, w = sd
        f = g.faces[w - n]
        k = len(f)
        s = f.index(x)
        cand = [(f[(s - 1) % k], x), (x, f[(s + 1) % k])]
        out = []
        for a, b in cand:
            if (a, b) in g.half and (b, a) in g.half:
                out.append((min(a, b), max(a, b)))
        return out

    def walk(start, enter):
        seq = []
        cur, sd = start, enter
        seen = {start}
        while True:
            sides = rg.rhombus_sides(cur)
            i = sides.index(sd)
            exit_side = sides[(i + 2) % 4]
            nxt = [r for r in rhombi_on_side(exit_side) if r != cur]
            if not nxt or nxt[0] in seen:
                return seq
            cur = nxt[0]
            seen.add(cur)
            seq.append(cur)
            sd = exit_side

    edge = (min(edge), max(edge))
    sides = rg.rhombus_sides(edge)
    fwd = walk(edge, sides[side % 4])
    back = walk(edge, sides[(side + 2) % 4])
    return back[::-1] + [edge] + fwd


def track_direction(rg: RhombicGraph, edge, side: int = 0) -> complex:
    """Unit tie direction (the shared side vector) of the track through ``side``."""
    u, w = rg.rhombus_sides(edge)[side % 4]
    return rg.step[(u, w)]
