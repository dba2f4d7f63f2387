"""First- and second-order variations of log det for the three Laplace-type operators.

Everything is expressed on a triangulation ``tri`` completing the limit graph of the
deformation. Per-face data are the discrete derivatives of the displacement, the
areas, the circumradii and the Kähler factor ``C(f)``. The finite-difference oracle
uses exact Dirichlet log-determinants through the determinant lemma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .delaunay import complete_to_triangulation
from .deformation import deform, limit_graph
from .errors import EpsilonOutOfRange, SupportsOverlap
from .fields import Field, FiniteField, SmoothField
from .geometry import PolyhedralGraph, regularize
from .green import GreenFunction
from .logdet import chord_H_prime, edge_logdet_L_prime
from .operators import dirichlet, nabla_coefficients, operator

KINDS = ("beltrami", "conformal", "kahler")


# ----------------------------------------------------------------------------
# per-face first-order data


def face_C(tri: PolyhedralGraph) -> np.ndarray:
    """``sum over the sides of (conj(z_u) - conj(z_v)) / (z_u - z_v)`` per triangle."""
    t = np.array(tri.faces, dtype=np.int64).reshape(-1, 3)
    z = tri.z[t]
    d = z - np.roll(z, -1, axis=1)
    return np.sum(d.conj() / d, axis=1)


@dataclass
class FaceBlocks:
    """First-order kernel data on a triangulation for one displacement field."""

    tri: PolyhedralGraph
    vals: np.ndarray
    coef: np.ndarray          # nabla coefficients, faces x 3
    verts: np.ndarray         # vertex triples, faces x 3
    dF: np.ndarray            # nabla F
    dbF: np.ndarray           # nabla-bar F
    C: np.ndarray

    @property
    def area(self):
        return self.tri.area

    @property
    def radius(self):
        return self.tri.radius

    @property
    def swab_D(self):
        """``-4 nablabar F``: the off-diagonal Beltrami factor."""
        return -4.0 * self.dbF

    @property
    def kahler_K(self):
        """``-4 / R^2 (nabla F + nablabar Fbar + C nablabar F + Cbar nabla Fbar)`` (real)."""
        k = 2.0 * self.dF.real + 2.0 * (self.C * self.dbF).real
        return -4.0 * k / self.radius ** 2

    @property
    def kahler_H(self):
        return -4.0 * self.dbF / self.radius ** 2

    @property
    def dlogR(self):
        """First-order relative change of each circumradius."""
        return self.dF.real + (self.C * self.dbF).real

    @property
    def support(self) -> np.ndarray:
        """Faces where the blocks do not vanish."""
        return np.flatnonzero((np.abs(self.dF) > 0) | (np.abs(self.dbF) > 0))


def face_blocks(tri: PolyhedralGraph, vals) -> FaceBlocks:
    coef, t = nabla_coefficients(tri)
    vals = np.asarray(vals, dtype=complex)
    fv = vals[t]
    dF = np.sum(coef * fv, axis=1)
    dbF = np.sum(coef.conj() * fv, axis=1)
    # values below round-off of the vertex data are exact zeros
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    dF[np.abs(dF) < 1e-14 * scale] = 0.0
    dbF[np.abs(dbF) < 1e-14 * scale] = 0.0
    return FaceBlocks(tri, vals, coef, t, dF, dbF, face_C(tri))


def face_operator_blocks(b: FaceBlocks, kind: str, faces=None) -> np.ndarray:
    """Per-face 3x3 contributions to the first-order operator variation."""
    faces = np.arange(len(b.verts)) if faces is None else np.asarray(faces)
    n = b.coef[faces]
    nb = n.conj()
    nn = n[:, :, None] * n[:, None, :]
    nbnb = nb[:, :, None] * nb[:, None, :]
    a = b.dbF[faces][:, None, None]
    if kind == "beltrami":
        A = b.area[faces][:, None, None]
        return -4.0 * A * (a * nn + a.conj() * nbnb)
    if kind == "kahler":
        W = (b.area / b.radius ** 2)[faces][:, None, None]
        k = (2.0 * b.dF.real + 2.0 * (b.C * b.dbF).real)[faces][:, None, None]
        nbn = nb[:, :, None] * n[:, None, :]
        return -4.0 * W * (k * nbn + a * nn + a.conj() * nbnb)
    raise ValueError(f"no face factorization for {kind!r}")


def _assemble_blocks(n_vertices, verts, blocks) -> sp.csr_matrix:
    rows = np.repeat(verts, 3, axis=1).ravel()
    cols = np.tile(verts, (1, 3)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n_vertices, n_vertices)).tocsr()


# ----------------------------------------------------------------------------
# conformal angles


@dataclass
class AngleVariation:
    """Per half-edge of the triangulation: north angle, its first-order change, the
    geometric factor E and the face it belongs to."""

    a: np.ndarray
    b: np.ndarray
    n: np.ndarray
    face: np.ndarray
    theta: np.ndarray
    E: np.ndarray
    dtheta: np.ndarray


def angle_variation(b: FaceBlocks) -> AngleVariation:
    """``dtheta_n = (i/2)(nablabar F E_n - nabla Fbar conj(E_n))`` for every half-edge."""
    tri = b.tri
    a, bb, n, f = tri.halfedges
    z = tri.z
    E = (z[bb] - z[n]).conj() / (z[bb] - z[n]) - (z[a] - z[n]).conj() / (z[a] - z[n])
    x = b.dbF[f] * E
    dtheta = (0.5j * (x - x.conj())).real
    q = (z[bb] - z[n]) / (z[a] - z[n])
    theta = 0.5 * math.pi - np.angle(q)
    return AngleVariation(a, bb, n, f, theta, E, dtheta)


def _edge_pairs(tri: PolyhedralGraph, av: AngleVariation):
    """For every interior edge ``u < v``: indices of its two half-edges (north, south)."""
    pos = {(int(x), int(y)): i for i, (x, y) in enumerate(zip(av.a, av.b))}
    north, south = [], []
    for u, v in tri.edges:
        i, j = pos.get((int(u), int(v))), pos.get((int(v), int(u)))
        if i is not None and j is not None:
            north.append(i)
            south.append(j)
    return np.array(north, dtype=np.int64), np.array(south, dtype=np.int64)


def delta_conformal(b: FaceBlocks, av: AngleVariation | None = None) -> sp.csr_matrix:
    """First-order change of the conformal Laplacian: edge weight ``-sec^2(theta) dtheta``."""
    av = av or angle_variation(b)
    tri = b.tri
    hn, hs = _edge_pairs(tri, av)
    th = 0.5 * (av.theta[hn] + av.theta[hs])
    dth = 0.5 * (av.dtheta[hn] + av.dtheta[hs])
    w = -dth / np.cos(th) ** 2
    u, v = av.a[hn], av.b[hn]
    nv = tri.n_vertices
    off = sp.coo_matrix((w, (u, v)), shape=(nv, nv)).tocsr()
    off = off + off.T
    return (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()


def delta_operator(b: FaceBlocks, kind: str) -> sp.csr_matrix:
    """Sparse first-order variation ``dO`` (per unit eps) on the triangulation's vertices."""
    if kind == "conformal":
        return delta_conformal(b)
    faces = b.support
    blocks = face_operator_blocks(b, kind, faces)
    M = _assemble_blocks(b.tri.n_vertices, b.verts[faces], blocks)
    return M.real.tocsr() if kind == "beltrami" else M


def chord_anomaly(b: FaceBlocks, av: AngleVariation | None = None):
    """Anomalous chord weights ``(1/2) Im[nablabar F(f_n) E_n tan^2 th_n + (s)]``.

    Returns ``(u, v, value, theta_n)`` arrays over the chords of the triangulation.
    """
    av = av or angle_variation(b)
    tri = b.tri
    hn, hs = _edge_pairs(tri, av)
    chord = np.abs(av.theta[hn] + av.theta[hs]) < 1e-9
    hn, hs = hn[chord], hs[chord]
    val = 0.5 * np.imag(
        b.dbF[av.face[hn]] * av.E[hn] * np.tan(av.theta[hn]) ** 2
        + b.dbF[av.face[hs]] * av.E[hs] * np.tan(av.theta[hs]) ** 2
    )
    return av.a[hn], av.b[hn], val, av.theta[hn]


def anomaly_matrix(b: FaceBlocks) -> sp.csr_matrix:
    """``d(conformal) - d(beltrami)``: nonzero only on chords."""
    u, v, val, _ = chord_anomaly(b)
    nv = b.tri.n_vertices
    # a chord enters like an edge of weight ``val``: off-diagonal ``-val``
    off = sp.coo_matrix((-val, (u, v)), shape=(nv, nv)).tocsr()
    off = off + off.T
    return (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()


# ----------------------------------------------------------------------------
# first-order traces


def _finite(F: Field, graph: PolyhedralGraph) -> FiniteField:
    vals = F.values(graph)
    return FiniteField({int(v): complex(vals[v]) for v in np.flatnonzero(np.abs(vals) > 0)})


def completion(graph_cr: PolyhedralGraph, F: Field) -> PolyhedralGraph:
    """A triangulation completing the limit graph of ``F``."""
    return complete_to_triangulation(limit_graph(regularize(graph_cr), F))


def first_order_trace(kind: str, graph_cr: PolyhedralGraph, F: Field, tri: PolyhedralGraph | None = None) -> float:
    """Local formula for ``d/deps log det`` at ``eps = 0+``.

    Beltrami: ``(1/pi) sum (dth_n L'(th_n) + dth_s L'(th_s))`` over interior edges.
    Conformal: ``(2/pi) dth L'(th)`` on regular edges and ``(1/pi) sum dth H'(th)`` on chords.
    Kähler: the Beltrami value minus ``sum dR / R`` over the faces.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    tri = tri or completion(graph_cr, F)
    b = face_blocks(tri, F.values(tri))
    av = angle_variation(b)
    hn, hs = _edge_pairs(tri, av)
    tn, ts = av.theta[hn], av.theta[hs]
    dn, ds = av.dtheta[hn], av.dtheta[hs]
    if kind == "conformal":
        chord = np.abs(tn + ts) < 1e-9
        reg = ~chord
        th = 0.5 * (tn + ts)
        val = (2 / math.pi) * np.sum(0.5 * (dn + ds)[reg] * edge_logdet_L_prime(th[reg]))
        val += (1 / math.pi) * np.sum(dn[chord] * chord_H_prime(tn[chord]) + ds[chord] * chord_H_prime(ts[chord]))
        return float(val)
    val = (1 / math.pi) * np.sum(dn * edge_logdet_L_prime(tn) + ds * edge_logdet_L_prime(ts))
    if kind == "kahler":
        val -= float(np.sum(b.dlogR))
    return float(val)


def Q_face(tri: PolyhedralGraph, gf: GreenFunction, faces=None) -> np.ndarray:
    """``sum_{u,v in f} nabla_fu nabla_fv G(u, v)`` for the given faces (default: all)."""
    coef, t = nabla_coefficients(tri)
    faces = np.arange(len(t)) if faces is None else np.asarray(faces, dtype=np.int64)
    out = np.empty(len(faces), dtype=complex)
    for k, fi in enumerate(faces):
        G = gf.matrix(t[fi], t[fi])
        out[k] = coef[fi] @ G @ coef[fi]
    return out


def stress_tensor(tri: PolyhedralGraph, gf: GreenFunction, faces=None) -> np.ndarray:
    """Vacuum expectation ``4 pi Q(f)``."""
    return 4.0 * math.pi * Q_face(tri, gf, faces)


def trace_with_green(dO, gf: GreenFunction) -> complex:
    """``tr[dO G]`` summed over the nonzero pattern of ``dO``."""
    dO = sp.coo_matrix(dO)
    keep = dO.data != 0
    r, c, d = dO.row[keep], dO.col[keep], dO.data[keep]
    if len(d) == 0:
        return 0j
    S = np.unique(np.concatenate([r, c]))
    pos = np.searchsorted(S, np.arange(max(S) + 1))
    G = gf.matrix(S, S)
    return complex(np.sum(d * G[pos[c], pos[r]]))


def first_order_trace_green(kind: str, graph_cr: PolyhedralGraph, F: Field,
                            gf: GreenFunction | None = None, tri: PolyhedralGraph | None = None) -> complex:
    """``tr[dO G_cr]`` with the quadrature Green's function."""
    tri = tri or completion(graph_cr, F)
    b = face_blocks(tri, F.values(tri))
    gf = gf or GreenFunction(tri)
    return trace_with_green(delta_operator(b, kind), gf)


# ----------------------------------------------------------------------------
# finite-difference oracle


class DirichletLogDet:
    """``log det O_eps - log det O_cr`` on the interior vertices of a window.

    The critical operator is factored once; each deformed operator differs from it on a
    few rows, so the ratio is the determinant of a small matrix.
    """

    def __init__(self, graph_cr: PolyhedralGraph, kind: str):
        self.graph = regularize(graph_cr)
        self.kind = kind
        O0, self.idx = dirichlet(operator(self.graph, kind), self.graph)
        self.O0 = sp.csc_matrix(O0)
        self.lu = spla.splu(self.O0)

    def ratio(self, graph_eps: PolyhedralGraph) -> float:
        Oe = sp.csr_matrix(operator(graph_eps, self.kind))[self.idx][:, self.idx]
        D = sp.csr_matrix(Oe - self.O0)
        D.data[np.abs(D.data) < 1e-15] = 0
        D.eliminate_zeros()
        rows = np.unique(np.concatenate([D.tocoo().row, D.tocoo().col]))
        if len(rows) == 0:
            return 0.0
        n = self.O0.shape[0]
        rhs = np.zeros((n, len(rows)), dtype=self.O0.dtype)
        rhs[rows, np.arange(len(rows))] = 1.0
        X = self.lu.solve(rhs)[rows]
        M = np.eye(len(rows)) + X @ D[rows][:, rows].toarray()
        _, ld = np.linalg.slogdet(M)
        return float(np.real(ld))

    def at(self, F: Field, eps: float) -> float:
        if eps == 0:
            return 0.0
        if eps < 0:
            vals = F.values(self.graph)
            F = FiniteField({int(v): -complex(vals[v]) for v in np.flatnonzero(np.abs(vals) > 0)})
            eps = -eps
        ge, _ = deform(self.graph, F, eps, check=False)
        return self.ratio(ge)


def _selects_chords(graph_cr: PolyhedralGraph, F: Field) -> bool:
    g = regularize(graph_cr)
    vals = F.values(g)
    return any(len(f) > 3 and np.any(np.abs(vals[list(f)]) > 0) for f in g.faces)


def fd_first_order(kind: str, graph_cr: PolyhedralGraph, F: Field, eps: float = 1e-5,
                   oracle: DirichletLogDet | None = None):
    """Finite-difference derivative of the Dirichlet log-det at ``eps = 0+``.

    Central when the field moves no cocyclic face; otherwise the one-sided second-order
    stencil, since the two signs of eps select different chords. Returns ``(value, scheme)``.
    """
    oracle = oracle or DirichletLogDet(graph_cr, kind)
    if _selects_chords(graph_cr, F):
        f1, f2 = oracle.at(F, eps), oracle.at(F, 2 * eps)
        return (4 * f1 - f2) / (2 * eps), "one-sided"
    return (oracle.at(F, eps) - oracle.at(F, -eps)) / (2 * eps), "central"


# ----------------------------------------------------------------------------
# second order: bi-local traces


@dataclass
class Bilocal:
    kind: str
    exact: float
    prediction: float
    imag: float
    distance: float
    pair_trace: np.ndarray | None = None
    pair_kernel: np.ndarray | None = None

    @property
    def residual(self) -> float:
        return self.exact - self.prediction


def _supports_distance(tri, b1: FaceBlocks, b2: FaceBlocks) -> float:
    f1, f2 = b1.support, b2.support
    if len(f1) == 0 or len(f2) == 0:
        return math.inf
    v1 = np.unique(b1.verts[f1])
    v2 = np.unique(b2.verts[f2])
    if np.intersect1d(v1, v2).size:
        raise SupportsOverlap("the two fields touch a common vertex")
    z1, z2 = tri.z[v1], tri.z[v2]
    return float(np.min(np.abs(z1[:, None] - z2[None, :])))


def pair_traces(X1, v1, X2, v2, gf: GreenFunction, chunk: int = 64) -> np.ndarray:
    """``t_fg = tr[X_f G X_g G]`` for 3x3 face blocks on vertex triples ``v1``, ``v2``."""
    u1, inv1 = np.unique(v1, return_inverse=True)
    u2, inv2 = np.unique(v2, return_inverse=True)
    inv1 = inv1.reshape(v1.shape)
    inv2 = inv2.reshape(v2.shape)
    G = gf.matrix(u1, u2)
    out = np.empty((len(v1), len(v2)), dtype=complex)
    for s in range(0, len(v1), chunk):
        rows = inv1[s:s + chunk]
        M = G[rows[:, :, None, None], inv2[None, None, :, :]]      # (f, i, g, k)
        M = M.transpose(0, 2, 1, 3)                                  # (f, g, i, k)
        Y = np.einsum("fij,fgjk->fgik", X1[s:s + chunk], M)
        Z = np.einsum("fgik,gkl->fgil", Y, X2)
        out[s:s + chunk] = np.einsum("fgil,fgil->fg", Z, M)
    return out


def bilocal_kernel(b1: FaceBlocks, f1, b2: FaceBlocks, f2) -> np.ndarray:
    """``(1/pi^2) Re[A dbF1 A dbF2 / (z_f - z_g)^4]`` per face pair (circumcenters)."""
    w1 = (b1.area * b1.dbF)[f1]
    w2 = (b2.area * b2.dbF)[f2]
    Z = b1.tri.center[f1][:, None] - b2.tri.center[f2][None, :]
    return (w1[:, None] * w2[None, :] / Z ** 4).real / math.pi ** 2


def second_order_bilocal(kind: str, graph_cr: PolyhedralGraph, F1: Field, F2: Field,
                         gf: GreenFunction | None = None, tri: PolyhedralGraph | None = None,
                         pairs: bool = False) -> Bilocal:
    """Exact ``tr[dO_1 G dO_2 G]`` and its leading prediction ``2 * sum kernel``."""
    g = regularize(graph_cr)
    tri = tri or completion(g, F1 + F2)
    gf = gf or GreenFunction(tri)
    b1 = face_blocks(tri, F1.values(tri))
    b2 = face_blocks(tri, F2.values(tri))
    d = _supports_distance(tri, b1, b2)
    if kind == "conformal":
        D1, D2 = delta_operator(b1, kind), delta_operator(b2, kind)
        val = _sparse_bilocal(D1, D2, gf)
        pred = 2.0 * float(np.sum(bilocal_kernel(b1, b1.support, b2, b2.support)))
        return Bilocal(kind, float(val.real), pred, float(val.imag), d)
    f1, f2 = b1.support, b2.support
    if len(f1) == 0 or len(f2) == 0:
        return Bilocal(kind, 0.0, 0.0, 0.0, d)
    X1 = face_operator_blocks(b1, kind, f1)
    X2 = face_operator_blocks(b2, kind, f2)
    t = pair_traces(X1, b1.verts[f1], X2, b2.verts[f2], gf)
    k = bilocal_kernel(b1, f1, b2, f2)
    tot = t.sum()
    return Bilocal(kind, float(tot.real), 2.0 * float(k.sum()), float(tot.imag), d,
                   t.real if pairs else None, k if pairs else None)


def _sparse_bilocal(D1, D2, gf: GreenFunction) -> complex:
    D1, D2 = sp.coo_matrix(D1), sp.coo_matrix(D2)
    S1 = np.unique(np.concatenate([D1.row[D1.data != 0], D1.col[D1.data != 0]]))
    S2 = np.unique(np.concatenate([D2.row[D2.data != 0], D2.col[D2.data != 0]]))
    if len(S1) == 0 or len(S2) == 0:
        return 0j
    G = gf.matrix(S1, S2)
    A = sp.csr_matrix(D1)[S1][:, S1].toarray()
    B = sp.csr_matrix(D2)[S2][:, S2].toarray()
    return complex(np.trace(A @ G @ B @ G.T))


# ----------------------------------------------------------------------------
# central charge


@dataclass
class ScalingRow:
    ell: float
    exact: float
    prediction: float
    fitted_c: float
    continuum: float
    n_pairs: int
    distance: float


def fit_central_charge(pair_trace, pair_kernel) -> float:
    """Least-squares ``c`` in ``-t_fg = c * kernel_fg`` over all face pairs."""
    t = np.asarray(pair_trace).ravel()
    k = np.asarray(pair_kernel).ravel()
    return float(-np.dot(t, k) / np.dot(k, k))


def continuum_bilocal(F1: SmoothField, F2: SmoothField, n: int = 48) -> float:
    """``(1/pi^2) iint Re[dbar F1(x) dbar F2(y) / (x - y)^4]`` by polar Gauss-Legendre.

    The node count doubles until two successive values agree to 1e-6 (relative, or
    absolute against the integral of the modulus).
    """
    def nodes(Fi, m):
        xr, wr = np.polynomial.legendre.leggauss(m)
        R = Fi.support_radius
        r = 0.5 * R * (xr + 1)
        wrr = 0.5 * R * wr * r
        phi = 2 * math.pi * np.arange(2 * m) / (2 * m)
        P = Fi.support_center + r[:, None] * np.exp(1j * phi)[None, :]
        W = wrr[:, None] * (2 * math.pi / (2 * m)) * np.ones_like(phi)[None, :]
        return P.ravel(), W.ravel()

    def integrate(m):
        x, wx = nodes(F1, m)
        y, wy = nodes(F2, m)
        a = F1.dbar(x) * wx
        bb = F2.dbar(y) * wy
        val, scale = 0j, 0.0
        for s in range(0, len(x), 512):
            K = 1.0 / (x[s:s + 512, None] - y[None, :]) ** 4
            val += a[s:s + 512] @ (K @ bb)
            scale += float(np.abs(a[s:s + 512]) @ (np.abs(K) @ np.abs(bb)))
        return float(val.real) / math.pi ** 2, scale / math.pi ** 2

    prev = None
    m = n
    while True:
        val, scale = integrate(m)
        if prev is not None and abs(val - prev) <= 1e-6 * max(abs(val), scale * 1e-3):
            return val
        if m >= 2 * n:
            return val
        prev, m = val, 2 * m


def central_charge_fit(make_graph, F1: SmoothField, F2: SmoothField, ells, kind: str = "beltrami",
                       continuum: bool = True) -> list:
    """Scaling table: for each ``ell`` the exact bi-local trace, its leading prediction,
    the per-pair fitted central charge and the continuum double integral.

    ``make_graph(F1_ell, F2_ell)`` returns a window containing both scaled supports.
    """
    rows = []
    cont = continuum_bilocal(F1, F2) if continuum else float("nan")
    for ell in ells:
        G1 = _scaled(F1, ell)
        G2 = _scaled(F2, ell)
        g = make_graph(G1, G2)
        res = second_order_bilocal(kind, g, G1, G2, pairs=True)
        c = fit_central_charge(res.pair_trace, res.pair_kernel)
        rows.append(ScalingRow(float(ell), res.exact, res.prediction, c, cont,
                               int(res.pair_trace.size), res.distance))
    return rows


def _scaled(F: SmoothField, ell: float) -> SmoothField:
    return SmoothField(F.name, F.phi, float(ell), F.center, F.rho, F.amp)


# ----------------------------------------------------------------------------
# anomalous terms


@dataclass
class AnomalousTerm:
    chord_chord: float = 0.0
    chord_edge: float = 0.0
    edge_chord: float = 0.0
    regular: float = 0.0
    has_chords: bool = False
    chords1: tuple = ()
    chords2: tuple = ()
    K_exact: np.ndarray | None = None
    K_asymptotic: np.ndarray | None = None
    pair_center_gap: np.ndarray | None = None
    pair_p1: np.ndarray | None = None

    @property
    def total(self) -> float:
        return self.regular + self.chord_edge + self.edge_chord + self.chord_chord


def _chord_table(b: FaceBlocks):
    u, v, val, th = chord_anomaly(b)
    tri = b.tri
    mid = [tri.half[(int(x), int(y))] for x, y in zip(u, v)]
    center = tri.center[mid] if len(mid) else np.zeros(0, dtype=complex)
    moved = np.array([np.any(np.abs(b.vals[list(tri.faces[f])]) > 0) for f in mid], dtype=bool)
    if len(u) == 0:
        moved = np.zeros(0, dtype=bool)
    touched = moved | (val != 0)
    return u[touched], v[touched], val[touched], th[touched], center[touched]


def anomalous_terms(graph_cr: PolyhedralGraph, F1: Field, F2: Field, gf: GreenFunction | None = None,
                    tri: PolyhedralGraph | None = None) -> AnomalousTerm:
    """Exact anomalous traces of the conformal Laplacian plus the chord kernels.

    ``K(e1, e2) = G(v1, v2) - G(u1, v2) - G(v1, u2) + G(u1, u2)`` is returned exactly and at
    leading order ``-(1/2 pi) Re[p1 p1' / (Z - Z')^2]`` for every pair of chords.
    """
    g = regularize(graph_cr)
    tri = tri or completion(g, F1 + F2)
    gf = gf or GreenFunction(tri)
    b1 = face_blocks(tri, F1.values(tri))
    b2 = face_blocks(tri, F2.values(tri))
    _supports_distance(tri, b1, b2)
    c1, c2 = _chord_table(b1), _chord_table(b2)
    out = AnomalousTerm(chords1=c1, chords2=c2)
    if len(c1[0]) == 0 and len(c2[0]) == 0:
        return out
    out.has_chords = True
    A1, A2 = anomaly_matrix(b1), anomaly_matrix(b2)
    L1, L2 = delta_operator(b1, "beltrami"), delta_operator(b2, "beltrami")
    out.chord_chord = _sparse_bilocal(A1, A2, gf).real if A1.nnz and A2.nnz else 0.0
    out.chord_edge = _sparse_bilocal(A1, L2, gf).real if A1.nnz and L2.nnz else 0.0
    out.edge_chord = _sparse_bilocal(L1, A2, gf).real if L1.nnz and A2.nnz else 0.0
    out.regular = _sparse_bilocal(L1, L2, gf).real if L1.nnz and L2.nnz else 0.0
    if len(c1[0]) and len(c2[0]):
        u1, v1, _, _, z1 = c1
        u2, v2, _, _, z2 = c2
        Gvv = gf.matrix(v1, v2)
        Guv = gf.matrix(u1, v2)
        Gvu = gf.matrix(v1, u2)
        Guu = gf.matrix(u1, u2)
        out.K_exact = Gvv - Guv - Gvu + Guu
        p1 = tri.z[v1] - tri.z[u1]
        p2 = tri.z[v2] - tri.z[u2]
        Z = z1[:, None] - z2[None, :]
        w = p1[:, None] * p2[None, :]
        out.K_asymptotic = -(w / Z ** 2).real / (2 * math.pi)
        out.pair_center_gap = Z
        out.pair_p1 = w
    return out


@dataclass
class HarmonicTest:
    """Fit of ``y = a cos(chi) + b sin(chi) + c`` and the F-test for ``c``."""

    coef: np.ndarray
    f_stat: float
    p_value: float
    n: int

    @property
    def intercept(self) -> float:
        return float(self.coef[2])

    def significant(self, level: float = 0.05) -> bool:
        return self.p_value < level


def harmonic_basis_test(y, chi) -> HarmonicTest:
    """Nested least squares: ``{cos, sin}`` (harmonic ``z^-4`` and ``zbar^-4``) against
    ``{cos, sin, 1}`` (adds the ``|z|^-4`` term). ``y`` is the pair value times ``|Z|^4``
    divided by the pair amplitude; ``chi`` the phase of the harmonic kernel."""
    y = np.asarray(y, dtype=float).ravel()
    chi = np.asarray(chi, dtype=float).ravel()
    full = np.column_stack([np.cos(chi), np.sin(chi), np.ones_like(chi)])
    red = full[:, :2]
    cf, *_ = np.linalg.lstsq(full, y, rcond=None)
    cr, *_ = np.linalg.lstsq(red, y, rcond=None)
    rss_f = float(np.sum((y - full @ cf) ** 2))
    rss_r = float(np.sum((y - red @ cr) ** 2))
    dof = len(y) - 3
    if rss_f <= 0:
        fstat = math.inf if rss_r > 0 else 0.0
    else:
        fstat = (rss_r - rss_f) / (rss_f / dof)
    p = float(stats.f.sf(fstat, 1, dof)) if math.isfinite(fstat) else 0.0
    return HarmonicTest(cf, float(fstat), p, len(y))


def chord_pair_samples(term: AnomalousTerm):
    """Normalized chord-chord data ``(y, chi)``: ``K^2 |Z|^4 / |p1 p1'|^2`` and
    ``arg(p1^2 p1'^2 / Z^4)``."""
    K = term.K_exact
    Z = term.pair_center_gap
    w = term.pair_p1
    y = K ** 2 * np.abs(Z) ** 4 / np.abs(w) ** 2
    chi = np.angle(w ** 2 / Z ** 4)
    return y.ravel(), chi.ravel()


def face_pair_samples(res: Bilocal, b1: FaceBlocks, f1, b2: FaceBlocks, f2):
    """Normalized Beltrami data: ``t_fg |Z|^4 / |w_f w_g|`` and ``arg(w_f w_g / Z^4)``."""
    w1 = (b1.area * b1.dbF)[f1]
    w2 = (b2.area * b2.dbF)[f2]
    Z = b1.tri.center[f1][:, None] - b2.tri.center[f2][None, :]
    w = w1[:, None] * w2[None, :]
    keep = np.abs(w) > 1e-12 * np.abs(w).max()
    y = res.pair_trace * np.abs(Z) ** 4 / np.where(keep, np.abs(w), 1.0)
    chi = np.angle(w / Z ** 4)
    return y[keep], chi[keep]


# ----------------------------------------------------------------------------
# finite-eps kernels


def big_D(dF, dbF, eps) -> np.ndarray:
    """The 2x2 per-face kernel (faces x 2 x 2) of the eps-derivative of the Beltrami
    operator written on the back-deformed triangulation."""
    dF = np.asarray(dF, dtype=complex)
    dbF = np.asarray(dbF, dtype=complex)
    dFc, dbFc = dbF.conj(), dF.conj()        # nabla Fbar, nablabar Fbar
    D = 1 + eps * (dF + dbFc) + eps ** 2 * (dF * dbFc - dbF * dFc)
    diag = -eps * dFc * dbF * (2 + eps * (dF + dbFc))
    out = np.empty(dF.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = diag
    out[..., 0, 1] = dFc * ((1 + eps * dF) ** 2 + eps ** 2 * dbF * dFc)
    out[..., 1, 0] = dbF * ((1 + eps * dbFc) ** 2 + eps ** 2 * dFc * dbF)
    out[..., 1, 1] = diag
    return -4.0 * out / (D ** 2)[..., None, None]


def big_E_prime(dF, dbF, eps) -> np.ndarray:
    """Continuum counterpart of :func:`big_D` built from ``dF`` and ``dbar F`` at a point."""
    return big_D(dF, dbF, eps)


@dataclass
class KernelSample:
    eps: float
    max_D: float
    max_K: float
    max_H: float
    D0: float
    K0: float
    H0: float
    derivative_gap: float
    n_faces: int

    @property
    def ok(self) -> bool:
        return self.max_D <= self.D0 and self.max_K <= self.K0 and self.max_H <= self.H0


def kernel_bounds(eps: float, M1: float, M2: float, R0: float = 1.0):
    """``(D0, K0, H0)`` at ``eps`` from the envelope of the circumradii."""
    from .deformation import radius_bounds

    rb = radius_bounds(eps, R0, M1, M2)
    m1, m2 = rb.m1bar, rb.m2bar
    D0 = 4 * m1 + 16 * m2 * rb.r_plus
    K0 = (16 * m1 + 64 * m2 * rb.r_plus) / rb.r_minus ** 2
    H0 = (4 * m1 + 16 * m2 * rb.r_plus) / rb.r_minus ** 2
    return D0, K0, H0


def beltrami_derivative(tri_eps: PolyhedralGraph, vals) -> sp.csr_matrix:
    """``Delta'(eps)`` from the data of the deformed triangulation itself."""
    b = face_blocks(tri_eps, vals)
    return delta_operator(b, "beltrami")


def beltrami_derivative_back(tri_back: PolyhedralGraph, vals, eps: float) -> sp.csr_matrix:
    """``Delta'(eps)`` from the 2x2 kernel on the back-deformed triangulation."""
    coef, t = nabla_coefficients(tri_back)
    vals = np.asarray(vals, dtype=complex)
    dF = np.sum(coef * vals[t], axis=1)
    dbF = np.sum(coef.conj() * vals[t], axis=1)
    K = big_D(dF, dbF, eps) * tri_back.area[:, None, None]
    n, nb = coef, coef.conj()
    # (nabla; nablabar)^dagger K (nabla; nablabar): left factors nablabar^T and nabla^T
    blocks = (nb[:, :, None] * K[:, 0, 0, None, None] * n[:, None, :]
              + nb[:, :, None] * K[:, 0, 1, None, None] * nb[:, None, :]
              + n[:, :, None] * K[:, 1, 0, None, None] * n[:, None, :]
              + n[:, :, None] * K[:, 1, 1, None, None] * nb[:, None, :])
    return _assemble_blocks(tri_back.n_vertices, t, blocks)


def full_variation_kernels(graph_cr: PolyhedralGraph, F: SmoothField, eps_grid) -> list:
    """Sample the finite-eps kernels along a deformation and check their bounds.

    For each eps the Delaunay triangulation of the displaced points gives the factors
    ``-4 nablabar F``, ``K`` and ``H``; their maxima are compared with the bounds. The
    back-deformed form of ``Delta'`` is compared with the direct one (``derivative_gap``).
    """
    M1, M2 = F.bounds()
    from .deformation import eps_max

    eb = 0.5 * eps_max(1.0, M1, M2)
    g = regularize(graph_cr)
    vals = F.values(g)
    out = []
    for eps in eps_grid:
        eps = float(eps)
        if eps < 0 or eps > eb:
            raise EpsilonOutOfRange(f"eps = {eps} outside [0, {eb}]")
        ge, _ = deform(g, F, eps, check=False) if eps > 0 else (g, None)
        te = complete_to_triangulation(ge)
        b = face_blocks(te, vals)
        mask = np.array([te.face_is_interior(f) for f in range(te.n_faces)])
        D0, K0, H0 = kernel_bounds(eps, M1, M2)
        direct = beltrami_derivative(te, vals)
        back = beltrami_derivative_back(te.with_positions(g.z), vals, eps)
        gap = abs(direct - back).max() if (direct - back).nnz else 0.0
        out.append(KernelSample(
            eps,
            float(np.max(np.abs(b.swab_D[mask]), initial=0.0)),
            float(np.max(np.abs(b.kahler_K[mask]), initial=0.0)),
            float(np.max(np.abs(b.kahler_H[mask]), initial=0.0)),
            D0, K0, H0, float(gap), int(mask.sum()),
        ))
    return out


# ----------------------------------------------------------------------------
# derivative of p3 on arbitrary triangles


def nabla_power_sum(angles, m: int) -> complex:
    """``sum_j nabla_{f v_j} exp(i m theta_j)`` on the unit-circle triangle with vertex
    angles ``theta_j`` (counter-clockwise)."""
    z = np.exp(1j * np.asarray(angles, dtype=float))
    area = 0.5 * ((z[1] - z[0]).conjugate() * (z[2] - z[0])).imag
    zc = z.conj()
    coef = 1j * (np.roll(zc, -1) - np.roll(zc, -2)) / (4.0 * area)
    return complex(np.sum(coef * np.exp(1j * m * np.asarray(angles))))


@dataclass
class P3Probe:
    max_faces: float
    max_all: float
    n_triangles: int
    worst: tuple
    bound: float = 6.0


def nabla_p3_probe(graph: PolyhedralGraph, n_random: int = 2000, reach: float = 4.0,
                   seed: int = 0, skinny: int = 500) -> P3Probe:
    """Empirical maximum of ``|nabla p3(t)| r^2 / R(t)`` over faces and sampled triangles.

    ``p3(u)`` is the third moment of a rhombic path from a fixed vertex to ``u``; random
    triples are drawn among vertices within ``reach`` of each other, plus nearly
    collinear triples on the lattice.
    """
    from .rhombic import RhombicGraph

    g = regularize(graph)
    rg = RhombicGraph(g)
    r = float(g.meta.get("isoradius", 1.0))
    p3 = rg.coordinates @ np.exp(3j * rg.directions)
    p3c = rg.coordinates @ np.exp(-3j * rg.directions)

    def stat(tris):
        z = g.z[tris]
        area = 0.5 * ((z[:, 1] - z[:, 0]).conj() * (z[:, 2] - z[:, 0])).imag
        ok = np.abs(area) > 1e-9
        z, tris, area = z[ok], tris[ok], area[ok]
        zc = z.conj()
        coef = 1j * (np.roll(zc, -1, axis=1) - np.roll(zc, -2, axis=1)) / (4.0 * area[:, None])
        d = np.abs(np.sum(coef * p3[tris], axis=1))
        db = np.abs(np.sum(coef.conj() * p3[tris], axis=1))
        a, b_, c = (np.abs(z[:, 1] - z[:, 2]), np.abs(z[:, 2] - z[:, 0]), np.abs(z[:, 0] - z[:, 1]))
        R = a * b_ * c / (4 * np.abs(area))
        s = np.maximum(d, db) * r ** 2 / R
        return s, tris

    faces = np.array([f for f in g.faces if len(f) == 3], dtype=np.int64).reshape(-1, 3)
    sf, _ = stat(faces)
    rng = np.random.default_rng(seed)
    inner = g.interior_vertices
    picks = []
    for _ in range(n_random):
        u = rng.choice(inner)
        near = np.flatnonzero(np.abs(g.z - g.z[u]) <= reach * r)
        near = near[near != u]
        if len(near) >= 2:
            v, w = rng.choice(near, 2, replace=False)
            picks.append((u, v, w))
    for _ in range(skinny):
        u = rng.choice(inner)
        near = np.flatnonzero((np.abs(g.z - g.z[u]) <= 2 * reach * r) & (np.arange(g.n_vertices) != u))
        if len(near) < 2:
            continue
        v = rng.choice(near)
        d = g.z[v] - g.z[u]
        # third point closest to the segment uv (but off it)
        t = ((g.z[near] - g.z[u]) / d)
        off = np.abs(t.imag) * abs(d)
        cand = near[(off > 1e-6) & (t.real > -0.5) & (t.real < 1.5) & (near != v)]
        if len(cand):
            w = cand[np.argmin(np.abs(((g.z[cand] - g.z[u]) / d).imag))]
            picks.append((u, v, w))
    tris = np.array(picks, dtype=np.int64).reshape(-1, 3)
    sa, ta = stat(tris) if len(tris) else (np.zeros(0), tris)
    allv = np.concatenate([sf, sa])
    worst = tuple(int(x) for x in ta[np.argmax(sa)]) if len(sa) else ()
    del p3c
    return P3Probe(float(sf.max(initial=0.0)), float(allv.max(initial=0.0)), int(len(allv)), worst)


# ----------------------------------------------------------------------------
# quadrilateral tilings: the infinitesimal conformal angle and its continuum limits


@dataclass
class QuadCell:
    z: np.ndarray              # the four vertices, counter-clockwise on the unit circle

    @classmethod
    def from_angles(cls, alpha) -> "QuadCell":
        return cls(np.exp(1j * np.asarray(alpha, dtype=float)))

    def e(self, m: int, n: int) -> complex:
        d = self.z[m - 1] - self.z[n - 1]
        return complex(d.conjugate() / d)

    @property
    def E(self) -> complex:
        return self.e(1, 2) - self.e(2, 3) + self.e(3, 4) - self.e(1, 4)

    @property
    def area(self) -> float:
        z = self.z
        return 0.5 * float(np.sum((z.conj() * np.roll(z, -1)).imag))

    def chord(self, sign: int) -> tuple:
        """``(z_sigma, tan^2 of the chord's north angle)``; ``+`` joins vertices 2 and 4."""
        from .geometry import north_angle

        z = self.z
        if sign > 0:
            u, v, n = z[1], z[3], z[0]
        else:
            u, v, n = z[0], z[2], z[1]
        th = north_angle(u, v, n)
        return complex(v - u), math.tan(th) ** 2


def _nabla_bar_triangle(pts, vals) -> np.ndarray:
    """``nablabar`` of vertex values on triangles given as (..., 3) arrays."""
    z = np.asarray(pts, dtype=complex)
    area = 0.5 * ((z[..., 1] - z[..., 0]).conj() * (z[..., 2] - z[..., 0])).imag
    zc = z.conj()
    coef = 1j * (np.roll(zc, -1, axis=-1) - np.roll(zc, -2, axis=-1)) / (4.0 * area[..., None])
    return np.sum(coef.conj() * vals, axis=-1)


def kappa_prime(F: SmoothField, cell: QuadCell, ell: float, p) -> np.ndarray:
    """eps-derivative at 0 of the conformal angle of the quad centered at ``ell p`` under
    ``z -> z + eps ell F(z / ell)``."""
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    q = ell * p[:, None] + cell.z[None, :]
    Fq = ell * F(q / ell)
    t124 = _nabla_bar_triangle(q[:, [0, 1, 3]], Fq[:, [0, 1, 3]])
    t234 = _nabla_bar_triangle(q[:, [1, 2, 3]], Fq[:, [1, 2, 3]])
    return (t124 * (cell.e(1, 2) - cell.e(1, 4))).imag + (t234 * (cell.e(3, 4) - cell.e(2, 3))).imag


def kappa(F: SmoothField, cell: QuadCell, ell: float, p, eps: float) -> np.ndarray:
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    q = ell * p[:, None] + cell.z[None, :]
    def cross(w):
        return (w[:, 3] - w[:, 2]) * (w[:, 1] - w[:, 0]) / ((w[:, 3] - w[:, 0]) * (w[:, 1] - w[:, 2]))

    # measured from the undeformed (real) cross-ratio, so no branch cut is crossed
    return np.angle(cross(q + eps * ell * F(q / ell)) / cross(q))


def second_derivative_sum(F: SmoothField, z, radius: float, n: int = 9) -> np.ndarray:
    """``max|d^2F| + 2 max|d dbar F| + max|dbar^2 F|`` over disks of ``radius`` about ``z``."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    rr = radius * np.sqrt(np.linspace(0, 1, n))
    ph = 2 * math.pi * np.arange(2 * n) / (2 * n)
    disk = (rr[:, None] * np.exp(1j * ph)[None, :]).ravel()
    w = z[:, None] + disk[None, :]
    dd, ddb, dbdb = F.second(w)
    return np.abs(dd).max(axis=1) + 2 * np.abs(ddb).max(axis=1) + np.abs(dbdb).max(axis=1)


@dataclass
class KappaCheck:
    ell: float
    max_gap: float
    max_ratio: float
    violations: int
    n_points: int


def kappa_convergence(F: SmoothField, cell: QuadCell, ells, n_grid: int = 21, n_offsets: int = 6) -> list:
    """Grid check of ``|kappa'(z) - Im[dbar F(p) E]| <= 4 M(z, ell) / ell`` for ``|z - p| < 1/ell``."""
    R = F.support_radius
    c = F.support_center
    t = np.linspace(-R, R, n_grid)
    X, Y = np.meshgrid(t, t)
    P = (c + X + 1j * Y).ravel()
    P = P[np.abs(P - c) < R]
    out = []
    for ell in ells:
        off = (0.95 / ell) * np.exp(2j * math.pi * np.arange(n_offsets) / n_offsets)
        off = np.concatenate([[0], off, 0.5 * off])
        Z = (P[:, None] + off[None, :]).ravel()
        Pp = np.repeat(P, len(off))
        inside = np.abs(Z - c) < R
        Z, Pp = Z[inside], Pp[inside]
        lhs = np.abs(kappa_prime(F, cell, ell, Z) - (F.dbar(Pp) * cell.E).imag)
        rhs = 4.0 * second_derivative_sum(F, Z, 1.0 / ell) / ell
        ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1), np.where(lhs > 1e-13, np.inf, 0))
        out.append(KappaCheck(float(ell), float(lhs.max()), float(ratio.max()),
                              int(np.sum(lhs > rhs + 1e-13)), int(len(Z))))
    return out


@dataclass
class JIntegrals:
    J_pp: float
    J_pm: float
    J_mp: float
    J_mm: float
    J1_p: float
    J1_m: float
    J2_p: float
    J2_m: float

    @property
    def chord_chord(self) -> float:
        return self.J_pp + self.J_pm + self.J_mp + self.J_mm

    @property
    def chord_edge(self) -> float:
        return self.J1_p + self.J1_m

    @property
    def edge_chord(self) -> float:
        return self.J2_p + self.J2_m


def anomaly_integrals(F1: SmoothField, F2: SmoothField, cell: QuadCell, n: int = 32) -> JIntegrals:
    """Continuum anomaly integrals over the two supports (polar Gauss-Legendre nodes)."""
    def nodes(Fi):
        xr, wr = np.polynomial.legendre.leggauss(n)
        R = Fi.support_radius
        r = 0.5 * R * (xr + 1)
        ph = 2 * math.pi * np.arange(2 * n) / (2 * n)
        P = Fi.support_center + r[:, None] * np.exp(1j * ph)[None, :]
        W = (0.5 * R * wr * r)[:, None] * (2 * math.pi / (2 * n)) * np.ones_like(ph)[None, :]
        return P.ravel(), W.ravel()

    x, wx = nodes(F1)
    y, wy = nodes(F2)
    E = cell.E
    gx = (F1.dbar(x) * E).imag
    gy = (F2.dbar(y) * E).imag
    part = {1: lambda g: np.maximum(g, 0), -1: lambda g: np.maximum(-g, 0)}
    D = x[:, None] - y[None, :]
    AQ = cell.area
    ch = {s: cell.chord(s) for s in (1, -1)}
    J = {}
    for s in (1, -1):
        zs, t2s = ch[s]
        for tau in (1, -1):
            zt, t2t = ch[tau]
            K = ((zs * zt / D ** 2).real) ** 2
            J[(s, tau)] = t2s * t2t / (16 * math.pi ** 2 * AQ ** 2) * float((part[s](gx) * wx) @ K @ (part[tau](gy) * wy))
        K4 = zs ** 2 / D ** 4
        J[("1", s)] = t2s / (8 * math.pi ** 2 * AQ) * float(((part[s](gx) * wx) @ (K4 @ (F2.dbar(y) * wy))).real)
        J[("2", s)] = t2s / (8 * math.pi ** 2 * AQ) * float(((F1.dbar(x) * wx) @ (K4 @ (part[s](gy) * wy))).real)
    return JIntegrals(J[(1, 1)], J[(1, -1)], J[(-1, 1)], J[(-1, -1)],
                      J[("1", 1)], J[("1", -1)], J[("2", 1)], J[("2", -1)])


@dataclass
class VariationReport:
    """Self-describing summary of a variation experiment."""

    kind: str
    order: int
    values: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "order": self.order, "values": self.values, "settings": self.settings}


# ----------------------------------------------------------------------------
# double discrete derivatives of the Green's function


def nabla_green_nabla(tri: PolyhedralGraph, gf: GreenFunction, f: int, g: int):
    """``([nabla G nabla^T]_fg, [nabla G nablabar^T]_fg)`` and their leading asymptotics.

    The leading terms are ``-1 / (4 pi Z^2)`` and
    ``(1/4 pi)(prod_g w / Z^3 - prod_f conj(w) / conj(Z)^3)`` with ``Z = c_g - c_f`` and
    ``w`` the unit vectors from a face's circumcenter to its vertices.
    """
    coef, t = nabla_coefficients(tri)
    G = gf.matrix(t[f], t[g])
    nn = complex(coef[f] @ G @ coef[g])
    nb = complex(coef[f] @ G @ coef[g].conj())
    Z = tri.center[f] - tri.center[g]
    wf = (tri.z[t[f]] - tri.center[f]) / tri.radius[f]
    wg = (tri.z[t[g]] - tri.center[g]) / tri.radius[g]
    lead_nn = -1.0 / (4 * math.pi * Z ** 2)
    # odd in Z: measured from f to g
    lead_nb = -(np.prod(wg) / Z ** 3 - np.prod(wf.conj()) / Z.conjugate() ** 3) / (4 * math.pi)
    return nn, nb, complex(lead_nn), complex(lead_nb)
