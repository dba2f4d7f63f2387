"""Critical Green's function: quadrature of the discrete exponential and its asymptotic series."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import PoleHit
from .geometry import PolyhedralGraph
from .operators import beltrami
from .rhombic import RhombicGraph, moments_from_theta

EULER_GAMMA = 0.57721566490153286


def discrete_exponential(steps, w: complex, tol: float = 1e-12) -> complex:
    """``prod (w + s) / (w - s)`` over unit steps ``s``."""
    steps = np.asarray(steps, dtype=complex)
    if steps.size and np.min(np.abs(w - steps)) < tol:
        raise PoleHit(f"w = {w} sits on a step phase")
    return complex(np.prod((w + steps) / (w - steps)))


# ----------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=None)
def _panel_nodes(npts: int):
    return np.polynomial.legendre.leggauss(npts)


def _nodes(total_steps: int, fine: float = 0.25, npts: int = 12):
    """Nodes and weights on [0, S] for the substitution t = exp(-s).

    Panels are fine up to a little past log(total steps), where the integrand falls
    from O(1) to its exponential tail, then coarse.
    """
    knee = math.log(1.0 + total_steps) + 4.0
    stop = knee + 40.0
    edges = np.concatenate([np.arange(0.0, knee, fine), np.arange(knee, stop + 1e-9, 2.0)])
    x, w = _panel_nodes(npts)
    a, b = edges[:-1, None], edges[1:, None]
    s = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    ws = (0.5 * (b - a) * w).ravel()
    return s, ws


def _rotated_angles(directions, net):
    """Step angles of a signed-count vector, rotated to be centred at zero."""
    ang = np.where(net > 0, directions, directions + math.pi)
    p1 = np.sum(net * np.exp(1j * directions))
    t0 = math.atan2(p1.imag, p1.real)
    mask = net != 0
    rel = np.remainder(ang - t0 + math.pi, 2 * math.pi) - math.pi
    lo, hi = rel[mask].min(), rel[mask].max()
    return rel - 0.5 * (lo + hi), np.abs(net)


def green_from_net(directions, nets, fine: float = 0.25, npts: int = 12) -> np.ndarray:
    """Green's function for a batch of signed step-count vectors (rows of ``nets``)."""
    directions = np.asarray(directions, dtype=float)
    nets = np.atleast_2d(np.asarray(nets, dtype=np.int64))
    out = np.zeros(len(nets))
    total = np.abs(nets).sum(axis=1)
    # group by path length so each group shares a node set
    for tot in np.unique(total):
        if tot == 0:
            continue
        rows = np.flatnonzero(total == tot)
        s, ws = _nodes(int(tot), fine, npts)
        t = np.exp(-s)
        for chunk in np.array_split(rows, max(1, len(rows) // 128)):
            alpha = np.empty((len(chunk), nets.shape[1]))
            mult = np.empty((len(chunk), nets.shape[1]))
            for k, r in enumerate(chunk):
                alpha[k], mult[k] = _rotated_angles(directions, nets[r])
            x = t[None, None, :] * np.exp(-1j * alpha)[:, :, None]
            # log prod ((1 - x)/(1 + x))^m = -2 sum m atanh(x)
            lg = -2.0 * np.einsum("bd,bdn->bn", mult, np.arctanh(x))
            a, b = lg.real, lg.imag
            integrand = np.expm1(a) * np.cos(b) - 2.0 * np.sin(0.5 * b) ** 2
            out[chunk] = integrand @ ws / (2.0 * math.pi)
    return out


def green_from_theta(theta) -> float:
    """Green's function from (angle, multiplicity) pairs describing a black-to-black path."""
    if not theta:
        return 0.0
    directions = np.array([a for a, _ in theta])
    net = np.array([m for _, m in theta])
    return float(green_from_net(directions, net[None, :])[0])


def green_from_steps(steps) -> float:
    """Green's function along an explicit list of unit steps (the direct product form)."""
    steps = np.asarray(steps, dtype=complex)
    if steps.size == 0:
        return 0.0
    ang = np.angle(steps)
    return green_from_theta([(float(a), 1) for a in ang])


class GreenFunction:
    """Cached critical Green's function on an isoradial window.

    Values depend only on the net step counts between the endpoints, so every lattice
    translate of a pair shares one quadrature.
    """

    def __init__(self, graph: PolyhedralGraph, rg: RhombicGraph | None = None):
        self.rg = rg if rg is not None else RhombicGraph(graph)
        self.graph = graph
        self.cache: dict = {}

    def _lookup(self, nets: np.ndarray) -> np.ndarray:
        keys = [r.tobytes() for r in nets]
        missing = {}
        for k, r in zip(keys, nets):
            if k not in self.cache and k not in missing:
                missing[k] = r
        if missing:
            vals = green_from_net(self.rg.directions, np.array(list(missing.values())))
            self.cache.update(zip(missing.keys(), vals))
        return np.array([self.cache[k] for k in keys])

    def __call__(self, u: int, v: int) -> float:
        return float(self._lookup(self.rg.net_steps(u, v)[None, :])[0])

    def matrix(self, us, vs) -> np.ndarray:
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        coords = self.rg.coordinates
        comp = np.asarray(self.rg._component)
        if len(set(comp[us]) | set(comp[vs])) > 1:
            from .errors import WindowTooSmall
            raise WindowTooSmall("vertices are not connected inside the window")
        nets = (coords[vs][None, :, :] - coords[us][:, None, :]).reshape(-1, coords.shape[1])
        # cheap dedupe before hashing
        uniq, inv = np.unique(nets, axis=0, return_inverse=True)
        vals = self._lookup(uniq)
        return vals[inv.ravel()].reshape(len(us), len(vs))


def green(graph: PolyhedralGraph, u: int, v: int) -> float:
    return GreenFunction(graph)(u, v)


def green_residual(graph: PolyhedralGraph, source: int, rows=None, gf: GreenFunction | None = None) -> float:
    """``max |(Delta G_source)(v) - delta(source, v)|`` over interior rows."""
    gf = gf or GreenFunction(graph)
    L = beltrami(graph)
    rows = graph.interior_vertices if rows is None else np.asarray(rows)
    cols = np.unique(L[rows].indices)
    gvals = gf.matrix([source], cols)[0]
    r = L[rows][:, cols] @ gvals
    r = r - (rows == source)
    return float(np.max(np.abs(r)))


# ----------------------------------------------------------------------------
# asymptotics


def _partitions(m: int, d: int, smallest: int = 1):
    """Partitions of m into d parts >= smallest, as non-decreasing tuples."""
    if d == 0:
        if m == 0:
            yield ()
        return
    for first in range(smallest, m // d + 1):
        for rest in _partitions(m - first, d - 1, first):
            yield (first,) + rest


def c_md(u: dict, m: int, d: int) -> complex:
    """Sum over r with sum r_s = d and sum s r_s = m of prod u_{2s+1}^{r_s} / r_s!."""
    total = 0j
    for part in _partitions(m, d):
        counts = {}
        for s in part:
            counts[s] = counts.get(s, 0) + 1
        term = 1 + 0j
        for s, r in counts.items():
            term *= u[2 * s + 1] ** r / math.factorial(r)
        total += term
    return total


@dataclass
class GreenSeries:
    p1: complex
    u: dict = field(default_factory=dict)
    c: dict = field(default_factory=dict)
    order: int = 0
    gamma: float = EULER_GAMMA
    terms: list = field(default_factory=list)


def green_asymptotic(p: dict, order: int = 1):
    """Large-distance series of the Green's function from the odd moments ``p``.

    Returns ``(value, GreenSeries)``. Order 0 is the bare log law.
    """
    if order > 6:
        raise ValueError("orders above 6 are not supported")
    p1 = complex(p[1])
    if abs(p1) == 0:
        raise ValueError("p1 must be nonzero")
    u = {n: complex(p[n]) / (n * p1) for n in range(3, 2 * order + 2, 2)}
    series = GreenSeries(p1, u, order=order)
    corr = 0.0
    for m in range(1, order + 1):
        for d in range(1, m + 1):
            c = c_md(u, m, d)
            series.c[(m, d)] = c
            term = (-1) ** d * math.factorial(2 * m + d - 1) * (c * (2 * p1) ** (-2 * m)).real
            series.terms.append(term)
            corr += term
    value = -(math.log(2 * abs(p1)) + EULER_GAMMA - corr) / (2 * math.pi)
    return value, series


def green_asymptotic_theta(theta, order: int = 1) -> float:
    return green_asymptotic(moments_from_theta(theta, 2 * order + 1), order)[0]
