"""Discrete derivatives and the three Laplace-type operators."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateFace
from .geometry import PolyhedralGraph


def _tri_arrays(tri: PolyhedralGraph):
    if not tri.is_triangulation():
        raise ValueError("discrete derivatives need a triangulation; complete the graph first")
    t = np.array(tri.faces, dtype=np.int64).reshape(-1, 3)
    if np.any(tri.area <= 0):
        raise DegenerateFace("zero-area face")
    return t


def nabla_coefficients(tri: PolyhedralGraph):
    """Per-face coefficients (F x 3) of the holomorphic derivative, and the vertex triples."""
    t = _tri_arrays(tri)
    zc = tri.z[t].conj()
    coef = 1j * (np.roll(zc, -1, axis=1) - np.roll(zc, -2, axis=1)) / (4.0 * tri.area[:, None])
    return coef, t


def nabla(tri: PolyhedralGraph) -> sp.csr_matrix:
    """Faces x vertices matrix with ``nabla z = 1`` and ``nabla conj(z) = 0`` on every face."""
    coef, t = nabla_coefficients(tri)
    rows = np.repeat(np.arange(len(t)), 3)
    return sp.csr_matrix((coef.ravel(), (rows, t.ravel())), shape=(len(t), tri.n_vertices))


def nabla_bar(tri: PolyhedralGraph) -> sp.csr_matrix:
    return nabla(tri).conj()


def _assemble(graph: PolyhedralGraph, a, b, vals) -> sp.csr_matrix:
    n = graph.n_vertices
    off = sp.coo_matrix((vals, (a, b)), shape=(n, n)).tocsr()
    off = off + off.conj().T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def beltrami(graph: PolyhedralGraph) -> sp.csr_matrix:
    """Cotangent-type Laplacian: edge weight ``-(tan th_n + tan th_s)/2``, chords weight 0."""
    a, b, _, _ = graph.halfedges
    tn = np.where(graph.halfedge_chord, 0.0, graph.halfedge_tan)
    return _assemble(graph, a, b, -0.5 * tn).real.tocsr()


def conformal(graph: PolyhedralGraph) -> sp.csr_matrix:
    """Conformal Laplacian: edge weight ``-tan((th_n + th_s)/2)``.

    Rim edges have one side only; their half-angle stands in for the average.
    """
    g = graph
    es = g.edges
    th = g.theta
    one = np.where(np.isnan(g.theta_n), g.theta_s, g.theta_n)
    th = np.where(np.isnan(th), one, th)
    w = -np.tan(th)
    w[g.is_chord] = 0.0
    n = g.n_vertices
    off = sp.coo_matrix((w, (es[:, 0], es[:, 1])), shape=(n, n)).tocsr()
    off = off + off.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def kahler(graph: PolyhedralGraph) -> sp.csr_matrix:
    """Hermitian operator with entry ``-((tan th_n + i)/R_n^2 + (tan th_s - i)/R_s^2)/2``."""
    a, b, _, f = graph.halfedges
    r2 = graph.radius[f] ** 2
    vals = -0.5 * (graph.halfedge_tan + 1j) / r2
    vals = np.where(graph.halfedge_chord, 0.0, vals)
    # half-edge a->b carries the north contribution of (a, b); its conjugate is the
    # south contribution of (b, a), so summing with the conjugate transpose is exact
    return _assemble(graph, a, b, vals)


OPERATORS = {"beltrami": beltrami, "conformal": conformal, "kahler": kahler}


def operator(graph: PolyhedralGraph, kind: str) -> sp.csr_matrix:
    try:
        return OPERATORS[kind](graph)
    except KeyError:
        raise ValueError(f"unknown operator kind {kind!r}") from None


def beltrami_factored(tri: PolyhedralGraph) -> sp.csr_matrix:
    """``2 (nabla_bar^T A nabla + nabla^T A nabla_bar)``."""
    N = nabla(tri)
    Nb = N.conj()
    A = sp.diags(tri.area)
    return (2.0 * (Nb.T @ A @ N + N.T @ A @ Nb)).real.tocsr()


def kahler_factored(tri: PolyhedralGraph) -> sp.csr_matrix:
    """``4 nabla_bar^T (A / R^2) nabla``."""
    N = nabla(tri)
    W = sp.diags(tri.area / tri.radius ** 2)
    return (4.0 * (N.conj().T @ W @ N)).tocsr()


def dirichlet(op, graph: PolyhedralGraph, keep=None):
    """Restrict to the interior vertices (or ``keep``) by deleting rows and columns."""
    idx = graph.interior_vertices if keep is None else np.asarray(keep)
    op = sp.csr_matrix(op)
    return op[idx][:, idx], idx


def greens_theorem_check(tri: PolyhedralGraph, region, phi):
    """Both sides of the discrete Green identity over a set of faces.

    Returns ``(sum_f A(f) nabla phi(f), sum over the region boundary of
    (conj z_v - conj z_u)(phi_u + phi_v) / 4i)`` with the boundary traversed clockwise.
    """
    region = sorted(set(int(f) for f in region))
    phi = np.asarray(phi, dtype=complex)
    N = nabla(tri)
    lhs = complex(np.sum(tri.area[region] * (N[region] @ phi)))
    halves = set()
    for fi in region:
        f = tri.faces[fi]
        for s in range(len(f)):
            halves.add((f[s], f[(s + 1) % len(f)]))
    rhs = 0j
    for u, v in halves:
        if (v, u) not in halves:
            rhs += (np.conj(tri.z[u]) - np.conj(tri.z[v])) * (phi[u] + phi[v]) / 4j
    return lhs, complex(rhs)
