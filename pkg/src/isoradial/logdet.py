"""Special functions of the log-determinant formulas and three log-det routes."""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import bernoulli

from .errors import NonPositiveDefinite, SingularSymbol
from .geometry import PolyhedralGraph
from .operators import dirichlet, operator

CATALAN = 0.91596559417721901505

# |B_2k| / (2k (2k+1) (2k)!) for the small-angle Clausen series
_B = bernoulli(80)
_CL_COEF = np.array([abs(_B[2 * k]) / (2 * k * (2 * k + 1) * math.factorial(2 * k)) for k in range(1, 40)])


def clausen2(theta):
    """Clausen function ``sum sin(k theta) / k^2``.

    Reduced to (-pi, pi] where the Bernoulli expansion around zero converges
    geometrically with ratio at most 1/4.
    """
    th = np.asarray(theta, dtype=float)
    x = np.remainder(th + math.pi, 2 * math.pi) - math.pi
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        head = np.where(ax > 0, x - x * np.log(np.where(ax > 0, ax, 1.0)), 0.0)
    x2 = x * x
    poly = np.zeros_like(x)
    for c in _CL_COEF[::-1]:
        poly = poly * x2 + c
    out = head + poly * x2 * x
    return out if out.ndim else float(out)


def lobachevsky(x):
    """``Cl2(2x) / 2``: odd, pi-periodic, zero at 0 and pi/2."""
    return 0.5 * clausen2(2.0 * np.asarray(x, dtype=float))


def edge_logdet_L(theta):
    """``L(t) + L(pi/2 - t) + t log|tan t|`` on (0, pi), extended oddly to (-pi, pi).

    The absolute value keeps the derivative equal to ``t / (sin t cos t)`` past pi/2.
    """
    th = np.asarray(theta, dtype=float)
    a = np.abs(th)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = np.where(a > 0, a * np.log(np.abs(np.tan(np.where(a > 0, a, 1.0)))), 0.0)
    val = lobachevsky(a) + lobachevsky(0.5 * math.pi - a) + tail
    out = np.sign(th) * val
    return out if out.ndim else float(out)


def edge_logdet_L_prime(theta):
    th = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(th == 0, 1.0, th / (np.sin(th) * np.cos(th)))
    return out if out.ndim else float(out)


def chord_H(theta):
    """Antiderivative of ``t cot t`` vanishing at 0: ``t log|2 sin t| + L(t)``."""
    th = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        head = np.where(th != 0, th * np.log(np.abs(2 * np.sin(np.where(th != 0, th, 1.0)))), 0.0)
    out = head + lobachevsky(th)
    return out if out.ndim else float(out)


def chord_H_prime(theta):
    th = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(th == 0, 1.0, th / np.tan(th))
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------------
# route 1: local edge formula


def _class_representatives(graph: PolyhedralGraph):
    """One interior vertex per translation class, when the window records its labels."""
    labels = graph.meta.get("labels")
    if not labels:
        return None
    reps = {}
    mid = np.median(graph.z.real) + 1j * np.median(graph.z.imag)
    order = np.argsort(np.abs(graph.z - mid))
    for v in order:
        c = labels[v][0]
        if c not in reps and graph.interior_mask[v]:
            reps[c] = int(v)
    return [reps[c] for c in sorted(reps)]


def logdet_local(graph: PolyhedralGraph) -> dict:
    """``(2/pi) sum_edges L(theta)`` over the window, per edge and per vertex."""
    mask = graph.interior_edge_mask & ~graph.is_chord
    contrib = np.zeros(len(graph.edges))
    contrib[mask] = (2.0 / math.pi) * edge_logdet_L(graph.theta[mask])
    per_vertex_edge = np.zeros(graph.n_vertices)
    np.add.at(per_vertex_edge, graph.edges[:, 0], 0.5 * contrib)
    np.add.at(per_vertex_edge, graph.edges[:, 1], 0.5 * contrib)
    reps = _class_representatives(graph)
    if reps is None:
        reps = graph.interior_vertices
    return {
        "total": float(contrib.sum()),
        "per_edge": contrib,
        "per_vertex": float(np.mean(per_vertex_edge[reps])),
    }


# ----------------------------------------------------------------------------
# route 2: symbol of a periodic lattice


def periodic_stencil(graph: PolyhedralGraph, kind: str = "beltrami", m: int = 1, n: int = 1):
    """Symbol data ``(classes, entries)`` for an m x n supercell of a labelled window.

    ``entries`` is a list of ``(row class, column class, (di, dj), value)``; the symbol is
    ``sigma[r, c] = sum value * exp(i (di zeta + dj omega))``.
    """
    labels = graph.meta.get("labels")
    if not labels:
        raise ValueError("graph has no lattice labels; generate it with generate_lattice")
    op = sp.csr_matrix(operator(graph, kind))
    ncls = 1 + max(l[0] for l in labels)
    # representative rows: one interior vertex per (class, i mod m, j mod n)
    reps = _class_representatives(graph)
    ci, cj = labels[reps[0]][1], labels[reps[0]][2]
    cells = [(c, a, b) for c in range(ncls) for a in range(m) for b in range(n)]
    index = {cell: k for k, cell in enumerate(cells)}
    where = {tuple(l): v for v, l in enumerate(labels)}
    entries = []
    for (c, a, b) in cells:
        v = where.get((c, ci + a, cj + b))
        if v is None or not graph.interior_mask[v]:
            raise ValueError("window too small for the requested supercell")
        row = op.getrow(v)
        for w, val in zip(row.indices, row.data):
            cw, iw, jw = labels[w]
            di, dj = iw - ci, jw - cj
            qi, ri = divmod(di, m)
            qj, rj = divmod(dj, n)
            entries.append((index[(c, a, b)], index[(cw, ri, rj)], (qi, qj), complex(val)))
    return len(cells), entries


def _symbol_logdet_grid(size, entries, N):
    h = 2 * math.pi / N
    k = np.arange(N) * h
    Z, W = np.meshgrid(k, k, indexing="ij")
    S = np.zeros((N, N, size, size), dtype=complex)
    for r, c, (di, dj), val in entries:
        S[:, :, r, c] += val * np.exp(1j * (di * Z + dj * W))
    S[0, 0] = np.eye(size)  # placeholder for the excluded zero mode
    sign, ld = np.linalg.slogdet(S)
    ld = ld.real if np.iscomplexobj(ld) else ld
    bad = np.abs(sign) == 0
    bad[0, 0] = False
    if np.any(bad):
        raise SingularSymbol("symbol is singular away from the zero mode")
    ld[0, 0] = 0.0
    return float(ld.sum()) * h * h / (4 * math.pi ** 2)


def logdet_symbol(graph: PolyhedralGraph, kind: str = "beltrami", m: int = 1, n: int = 1, N: int = 512) -> float:
    """Per-vertex log-det from the symbol integral over the torus.

    The zero-mode node is dropped from the N x N trapezoid. The log singularity it
    leaves behind gives an error ``h^2 (a log h + b) + O(h^4 log h)``, removed by
    solving for ``a`` and ``b`` with the N/2 and N/4 grids.
    """
    size, entries = periodic_stencil(graph, kind, m, n)
    Ns = [N // 4, N // 2, N]
    vals = [_symbol_logdet_grid(size, entries, k) for k in Ns]
    hs = [2 * math.pi / k for k in Ns]
    A = np.array([[1.0, h * h * math.log(h), h * h] for h in hs])
    sol = np.linalg.solve(A, np.array(vals))
    return float(sol[0]) / size


# ----------------------------------------------------------------------------
# route 3: Dirichlet windows


def logdet_matrix(M) -> float:
    """log det of a Hermitian positive definite matrix (dense or sparse)."""
    if sp.issparse(M):
        if M.shape[0] <= 4000:
            M = M.toarray()
        else:
            lu = spla.splu(sp.csc_matrix(M), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
            d = lu.U.diagonal()
            if np.any(d.real <= 0):
                raise NonPositiveDefinite("non-positive pivot in sparse factorization")
            return float(np.sum(np.log(np.abs(d))))
    M = np.asarray(M)
    try:
        c = la.cholesky(M, lower=True)
    except la.LinAlgError:
        raise NonPositiveDefinite("matrix is not positive definite") from None
    return float(2.0 * np.sum(np.log(np.abs(np.diag(c)))))


def logdet_dirichlet(graphs, kind: str = "beltrami") -> list:
    """Normalized ``log det / |V|`` of the interior-vertex restriction of each window."""
    out = []
    for g in graphs:
        op, idx = dirichlet(operator(g, kind), g)
        out.append(logdet_matrix(op) / len(idx))
    return out


def extrapolate_dirichlet(sizes, values) -> float:
    """Least-squares fit ``f + a/L + b/L^2`` with ``L = sqrt(|V|)``; returns ``f``."""
    L = np.sqrt(np.asarray(sizes, dtype=float))
    A = np.column_stack([np.ones_like(L), 1 / L, 1 / L ** 2])
    sol, *_ = np.linalg.lstsq(A, np.asarray(values, dtype=float), rcond=None)
    return float(sol[0])
