"""Command-line front end.

Every subcommand accepts ``--config file.json``; keys use the long option names with
dashes replaced by underscores, and flags given on the command line win. Tables are
CSV files whose first line names the units. Each run also writes ``manifest.json``
next to its outputs unless ``--no-manifest`` is given.

Exit codes: 0 success, 2 invalid input or failed validation, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, IsoradialError

UNITS = "# units: lengths in R_cr = 1, angles in radians"

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class NumericFailure(IsoradialError):
    exit_code = EXIT_NUMERIC


# ----------------------------------------------------------------------------
# small helpers


def _floats(text) -> list:
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x)) if math.isfinite(x) else str(float(x))
    return str(x)


def write_csv(path, columns, rows) -> str:
    """Write a table with the units line first; returns the text written."""
    buf = io.StringIO()
    buf.write(UNITS + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    text = buf.getvalue()
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _dump(doc, path):
    text = json.dumps(doc, indent=1, sort_keys=True, default=_jsonable)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _jsonable(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _cx(z) -> list:
    z = complex(z)
    return [z.real, z.imag]


def _load_graph(path):
    from .geometry import PolyhedralGraph

    try:
        return PolyhedralGraph.load(path)
    except FileNotFoundError:
        raise ConfigError(f"graph file not found: {path}") from None
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: malformed graph document ({exc})") from None


def _load_field(spec, graph=None):
    """A field from a JSON file path, an inline JSON string or a dict."""
    from .fields import field_from_json

    if spec is None:
        raise ConfigError("a field is required")
    if isinstance(spec, dict):
        doc = spec
    elif isinstance(spec, str) and spec.lstrip().startswith("{"):
        doc = json.loads(spec)
    else:
        try:
            with open(spec) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"field file not found: {spec}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{spec}: {exc}") from None
    return field_from_json(doc, graph)


def _vertex(graph, ident) -> int:
    pos = {i: k for k, i in enumerate(graph.ids)}
    try:
        return pos[int(ident)]
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"unknown vertex id {ident!r}") from None


def _out_path(args, default):
    out = args.out or default
    d = os.path.dirname(out)
    if d and out != "-":
        os.makedirs(d, exist_ok=True)
    return out


class Manifest:
    def __init__(self, args):
        import scipy

        self.enabled = not getattr(args, "no_manifest", False)
        self.doc = {
            "command": args.command,
            "version": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "settings": {k: v for k, v in sorted(vars(args).items())
                         if k not in ("func", "config", "no_manifest") and v is not None},
            "outputs": [],
            "tolerances": {},
        }

    def add(self, path):
        if path not in (None, "-"):
            self.doc["outputs"].append(path)

    def write(self):
        if not self.enabled or not self.doc["outputs"]:
            return
        first = self.doc["outputs"][0]
        path = os.path.join(os.path.dirname(first) or ".", "manifest.json")
        _dump(self.doc, path)


# ----------------------------------------------------------------------------
# subcommands


def cmd_gen_lattice(args, man):
    from .delaunay import LatticeSpec, generate_lattice

    params = {"alpha": _floats(args.alpha)} if args.alpha else {}
    g = generate_lattice(LatticeSpec(args.kind, float(args.window), params))
    out = _out_path(args, "graph.json")
    _dump(g.to_json(), out)
    man.add(out)
    if out != "-":
        print(f"{g.n_vertices} vertices, {g.n_faces} faces -> {out}")
    return EXIT_OK


def cmd_validate(args, man):
    from .geometry import validate

    g = _load_graph(args.graph)
    rep = validate(g, args.mode, tol=args.tol)
    doc = rep.to_dict()
    doc["ids"] = {"violations": [[int(f), g.ids[v]] for f, v in rep.violations]}
    _dump(doc, args.out)
    man.add(args.out)
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_operator(args, man):
    import scipy.io

    from .operators import operator

    g = _load_graph(args.graph)
    M = operator(g, args.kind).tocoo()
    out = _out_path(args, "matrix.mtx")
    target = sys.stdout.buffer if out == "-" else out
    scipy.io.mmwrite(target, M, comment=f"{args.kind} operator; rows/cols follow vertex order of the graph file")
    man.add(out)
    return EXIT_OK


def cmd_green(args, man):
    from .green import GreenFunction, green_asymptotic
    from .rhombic import RhombicGraph, moments_from_theta, separating_angles

    g = _load_graph(args.graph)
    u, v = _vertex(g, args.u), _vertex(g, args.v)
    rg = RhombicGraph(g)
    val = GreenFunction(g, rg)(u, v)
    doc = {"u": g.ids[u], "v": g.ids[v], "value": val}
    if u != v:
        theta = separating_angles(rg, u, v)
        p = moments_from_theta(theta, 2 * max(args.asymptotic or 1, 1) + 1)
        doc.update(p1=_cx(p[1]), p3=_cx(p[3]))
        if args.asymptotic is not None:
            approx, series = green_asymptotic(p, args.asymptotic)
            doc.update(asymptotic=approx, order=args.asymptotic, series_terms=series.terms,
                       difference=val - approx)
    _dump(doc, args.out)
    man.add(args.out)
    return EXIT_OK


def cmd_moments(args, man):
    from .rhombic import RhombicGraph, moments_from_theta, separating_angles

    g = _load_graph(args.graph)
    u, v = _vertex(g, args.u), _vertex(g, args.v)
    rg = RhombicGraph(g)
    theta = separating_angles(rg, u, v) if u != v else []
    p = moments_from_theta(theta, args.max_n)
    doc = {
        "u": g.ids[u], "v": g.ids[v],
        "p": {str(n): _cx(val) for n, val in sorted(p.items())},
        "theta": [[a, m] for a, m in theta],
        "bounds_hold": all(abs(p[n]) <= n * abs(p[1]) + 1e-9 for n in p),
    }
    _dump(doc, args.out)
    man.add(args.out)
    return EXIT_OK


def cmd_logdet(args, man):
    from .delaunay import LatticeSpec, generate_lattice
    from .logdet import extrapolate_dirichlet, logdet_dirichlet, logdet_local, logdet_symbol

    g = _load_graph(args.graph)
    rows = []
    if args.route == "local":
        if args.kind != "conformal" and args.kind != "beltrami":
            raise ConfigError("the local formula covers the beltrami and conformal operators")
        rows.append(("local", args.kind, g.n_vertices, logdet_local(g)["per_vertex"]))
    elif args.route == "symbol":
        rows.append(("symbol", args.kind, g.n_vertices, logdet_symbol(g, args.kind, N=args.grid)))
    else:
        kind = g.meta.get("kind")
        windows = _floats(args.windows) or [4, 6, 8, 10]
        if kind is None:
            raise ConfigError("dirichlet route needs a generated lattice (meta.kind) to rebuild windows")
        params = {"alpha": g.meta["alpha"]} if kind in ("quad_tiling", "custom_rhombic") else {}
        graphs = [generate_lattice(LatticeSpec(kind, w, params)) for w in windows]
        vals = logdet_dirichlet(graphs, args.kind)
        sizes = [len(x.interior_vertices) for x in graphs]
        for w, n, val in zip(windows, sizes, vals):
            rows.append((f"dirichlet_w{_fmt(w)}", args.kind, n, val))
        rows.append(("dirichlet_extrapolated", args.kind, 0, extrapolate_dirichlet(sizes, vals)))
    out = _out_path(args, "-")
    write_csv(out, ["route", "operator", "n_vertices", "logdet_per_vertex"], rows)
    man.add(out)
    if args.figure and args.route == "dirichlet":
        from .plotting import line_plot

        pts = rows[:-1]
        line_plot(args.figure, [1 / math.sqrt(r[2]) for r in pts], {"dirichlet": [r[3] for r in pts]},
                  "1/sqrt(|V|)", "log det / |V|", hline=rows[-1][3])
        man.add(args.figure)
    return EXIT_OK


def cmd_deform(args, man):
    from .deformation import deform, sweep, thresholds
    from .fields import SmoothField, require_nonzero

    g = _load_graph(args.graph)
    F = _load_field(args.field, g)
    require_nonzero(F.values(g))
    base = args.out or "deformed"
    os.makedirs(os.path.dirname(base) or ".", exist_ok=True)
    th = thresholds(g, F)
    if args.sweep:
        grid = np.linspace(0, args.eps, args.sweep + 1)[1:]
        steps = sweep(g, F, grid, check_bounds=isinstance(F, SmoothField))
        rows = []
        for st in steps:
            rmin, rmax = float(st.graph.radius.min()), float(st.graph.radius.max())
            b = st.bounds
            rows.append((st.eps, len(st.report.lost), len(st.report.gained), len(st.report.chords), rmin, rmax,
                         b.r_minus if b else float("nan"), b.r_plus if b else float("nan"), len(st.violations)))
        path = base + "_sweep.csv"
        write_csv(path, ["eps", "edges_lost", "edges_gained", "chords", "radius_min", "radius_max",
                         "bound_r_minus", "bound_r_plus", "bound_violations"], rows)
        man.add(path)
        ge, rep = steps[-1].graph, steps[-1].report
        failed = any(st.violations for st in steps)
        if args.figure:
            from .plotting import line_plot

            line_plot(args.figure, [r[0] for r in rows],
                      {"min R": [r[4] for r in rows], "max R": [r[5] for r in rows],
                       "R-": [r[6] for r in rows], "R+": [r[7] for r in rows]}, "eps", "circumradius")
            man.add(args.figure)
    else:
        ge, rep = deform(g, F, args.eps)
        failed = False
        if args.figure:
            from .plotting import graph_plot

            graph_plot(args.figure, ge, rep.gained)
            man.add(args.figure)
    gpath = base + ".json"
    _dump(ge.to_json(), gpath)
    fpath = base + "_flips.csv"
    write_csv(fpath, ["eps", "change", "u", "v"],
              [(rep.eps, kind, ge.ids[u], ge.ids[v]) for kind, u, v in rep.rows()])
    man.add(gpath)
    man.add(fpath)
    man.doc["thresholds"] = th.to_dict()
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_variation(args, man):
    from . import variation as var

    g = _load_graph(args.graph)
    F1 = _load_field(args.field1, g)
    kinds = [args.kind] if args.kind else list(var.KINDS)
    report = var.VariationReport(args.kind or "all", args.order,
                                 settings={"eps": args.eps, "tol": args.tol, "window_vertices": g.n_vertices})
    failed = False
    if args.order == 1:
        tri = var.completion(g, F1)
        for kind in kinds:
            val = var.first_order_trace(kind, g, F1, tri)
            entry = {"local": val}
            if args.oracle:
                fd, scheme = var.fd_first_order(kind, g, F1, eps=args.eps)
                rel = abs(fd - val) / max(abs(val), 1e-300)
                entry.update(finite_difference=fd, scheme=scheme, relative_error=rel)
                failed |= rel > max(args.tol, 10 * args.eps)
            report.values[kind] = entry
    else:
        if args.field2 is None:
            raise ConfigError("order 2 needs --field2")
        F2 = _load_field(args.field2, g)
        tri = var.completion(g, F1 + F2)
        gf = var.GreenFunction(tri)
        for kind in kinds:
            if kind == "conformal":
                at = var.anomalous_terms(g, F1, F2, gf=gf, tri=tri)
                report.values[kind] = {"regular": at.regular, "chord_edge": at.chord_edge,
                                       "edge_chord": at.edge_chord, "chord_chord": at.chord_chord,
                                       "total": at.total, "has_chords": at.has_chords}
                continue
            res = var.second_order_bilocal(kind, g, F1, F2, gf=gf, tri=tri)
            report.values[kind] = {"exact": res.exact, "prediction": res.prediction, "residual": res.residual,
                                   "imaginary": res.imag, "support_distance": res.distance}
    _dump(report.to_dict(), args.out)
    man.add(args.out)
    return EXIT_NUMERIC if failed else EXIT_OK


def _strip_window(kind, alpha):
    from .delaunay import crop, lattice

    def make(G1, G2):
        R = max(G1.support_radius, G2.support_radius) + 3
        W = max(abs(G1.support_center), abs(G2.support_center)) + R
        ymid = 0.5 * (G1.support_center + G2.support_center).imag
        W = W + abs(ymid)
        return crop(lattice(kind, W, alpha), lambda z: np.abs(z.imag - ymid) < R)

    return make


def cmd_scaling(args, man):
    from . import variation as var
    from .fields import SmoothField

    F1 = _load_field(args.field1) if args.field1 else SmoothField("bump", 0.0, 1.0, -4 + 0j, 1.0, 1.0)
    F2 = _load_field(args.field2) if args.field2 else SmoothField("bump", 0.0, 1.0, 4 + 0j, 1.0, 1.0)
    if not (isinstance(F1, SmoothField) and isinstance(F2, SmoothField)):
        raise ConfigError("scaling needs smooth fields")
    ells = _floats(args.ell) or [4, 8, 16]
    alpha = _floats(args.alpha) or None
    rows_all = []
    for op in [args.kind] if args.kind else ["beltrami", "kahler"]:
        rows = var.central_charge_fit(_strip_window(args.lattice, alpha), F1, F2, ells, op,
                                      continuum=not args.skip_continuum)
        rows_all += [(args.lattice, op, r.ell, r.exact, r.prediction, r.fitted_c, r.continuum, r.n_pairs,
                      r.distance) for r in rows]
    out = _out_path(args, "-")
    write_csv(out, ["lattice", "operator", "ell", "exact", "prediction", "fitted_c", "continuum_integral",
                    "face_pairs", "support_distance"], rows_all)
    man.add(out)
    man.doc["tolerances"]["central_charge_band"] = args.band
    if args.figure:
        from .plotting import line_plot

        ops = sorted({r[1] for r in rows_all})
        line_plot(args.figure, ells, {op: [r[5] for r in rows_all if r[1] == op] for op in ops},
                  "ell", "fitted c", logx=True, hline=-2.0)
        man.add(args.figure)
    lo, hi = _floats(args.band)
    last = [r[5] for r in rows_all if r[2] == max(ells)]
    return EXIT_OK if all(lo <= c <= hi for c in last) else EXIT_NUMERIC


def cmd_anomaly(args, man):
    from . import variation as var
    from .delaunay import QUAD_EXAMPLE, crop, lattice
    from .fields import SmoothField

    alpha = tuple(_floats(args.alpha)) or QUAD_EXAMPLE
    cell = var.QuadCell.from_angles(alpha)
    phi = args.phi
    sep = args.separation
    base = args.out or "anomaly"
    os.makedirs(os.path.dirname(base) or ".", exist_ok=True)
    rows, tests = [], []
    U1 = SmoothField("mollified_shear", phi, 1.0, -0.5 * sep + 0j, 1.0, 1.0)
    U2 = SmoothField("mollified_shear", phi, 1.0, 0.5 * sep + 0j, 1.0, 1.0)
    J = var.anomaly_integrals(U1, U2, cell)
    rng = np.random.default_rng(args.seed)
    for ell in _floats(args.ell) or [2, 3, 4]:
        F1 = SmoothField("mollified_shear", phi, ell, -0.5 * sep + 0j, 1.0, 1.0)
        F2 = SmoothField("mollified_shear", phi, ell, 0.5 * sep + 0j, 1.0, 1.0)
        R = ell + 3
        g = crop(lattice("quad_tiling", 0.5 * sep * ell + R, alpha), lambda z: np.abs(z.imag) < R)
        tri = var.completion(g, F1 + F2)
        gf = var.GreenFunction(tri)
        at = var.anomalous_terms(g, F1, F2, gf=gf, tri=tri)
        rows.append((ell, at.chord_chord, J.chord_chord, at.chord_edge, J.chord_edge, at.edge_chord,
                     J.edge_chord, at.regular))
        if at.K_exact is not None:
            y, chi = var.chord_pair_samples(at)
            idx = rng.choice(len(y), min(args.pairs, len(y)), replace=False)
            h = var.harmonic_basis_test(y[idx], chi[idx])
            tests.append((ell, "chord_chord", h.n, h.coef[0], h.coef[1], h.intercept, h.f_stat, h.p_value))
        res = var.second_order_bilocal("beltrami", g, F1, F2, gf=gf, tri=tri, pairs=True)
        b1 = var.face_blocks(tri, F1.values(tri))
        b2 = var.face_blocks(tri, F2.values(tri))
        y, chi = var.face_pair_samples(res, b1, b1.support, b2, b2.support)
        idx = rng.choice(len(y), min(args.pairs, len(y)), replace=False)
        h = var.harmonic_basis_test(y[idx], chi[idx])
        tests.append((ell, "beltrami", h.n, h.coef[0], h.coef[1], h.intercept, h.f_stat, h.p_value))
    p1 = base + "_sums.csv"
    write_csv(p1, ["ell", "chord_chord", "J_chord_chord", "chord_edge", "J_chord_edge", "edge_chord",
                   "J_edge_chord", "regular"], rows)
    p2 = base + "_ftest.csv"
    write_csv(p2, ["ell", "term", "pairs", "cos_coef", "sin_coef", "intercept", "F", "p_value"], tests)
    checks = var.kappa_convergence(U1, cell, _floats(args.ell) or [2, 3, 4])
    p3 = base + "_kappa.csv"
    write_csv(p3, ["ell", "max_gap", "max_ratio_to_bound", "violations", "points"],
              [(c.ell, c.max_gap, c.max_ratio, c.violations, c.n_points) for c in checks])
    for p in (p1, p2, p3):
        man.add(p)
    man.doc["seed"] = args.seed
    if args.figure:
        from .plotting import line_plot

        line_plot(args.figure, [r[0] for r in rows], {"chord-chord": [r[1] for r in rows]}, "ell",
                  "anomalous trace", hline=J.chord_chord)
        man.add(args.figure)
    return EXIT_NUMERIC if any(c.violations for c in checks) else EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isoradial", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file with default option values")
        sp.add_argument("--no-manifest", action="store_true", help="do not write manifest.json")
        sp.set_defaults(func=func)
        return sp

    s = add("gen-lattice", cmd_gen_lattice, "generate an isoradial lattice window")
    s.add_argument("--kind", default="square", choices=["square", "triangular", "quad_tiling", "custom_rhombic"])
    s.add_argument("--window", type=float, default=8)
    s.add_argument("--alpha", help="comma-separated cell angles")
    s.add_argument("-o", "--out")

    s = add("validate", cmd_validate, "check the empty-circumdisk property")
    s.add_argument("graph")
    s.add_argument("--mode", default="delaunay", choices=["delaunay", "weak_delaunay", "isoradial"])
    s.add_argument("--tol", type=float)
    s.add_argument("-o", "--out")

    s = add("operator", cmd_operator, "write an operator matrix in MatrixMarket format")
    s.add_argument("graph")
    s.add_argument("--kind", default="beltrami", choices=["beltrami", "conformal", "kahler"])
    s.add_argument("-o", "--out")

    s = add("green", cmd_green, "critical Green's function between two vertices")
    s.add_argument("graph")
    s.add_argument("--u", required=True)
    s.add_argument("--v", required=True)
    s.add_argument("--asymptotic", type=int)
    s.add_argument("-o", "--out")

    s = add("moments", cmd_moments, "odd moments of the rhombic path between two vertices")
    s.add_argument("graph")
    s.add_argument("--u", required=True)
    s.add_argument("--v", required=True)
    s.add_argument("--max-n", type=int, default=9)
    s.add_argument("-o", "--out")

    s = add("logdet", cmd_logdet, "per-vertex log-determinant by one route")
    s.add_argument("graph")
    s.add_argument("--route", default="local", choices=["local", "symbol", "dirichlet"])
    s.add_argument("--kind", default="beltrami", choices=["beltrami", "conformal", "kahler"])
    s.add_argument("--windows", help="window half-widths for the dirichlet route")
    s.add_argument("--grid", type=int, default=512)
    s.add_argument("--figure")
    s.add_argument("-o", "--out")

    s = add("deform", cmd_deform, "deform a graph and report flips")
    s.add_argument("graph")
    s.add_argument("--field")
    s.add_argument("--eps", type=float, default=0.05)
    s.add_argument("--sweep", type=int, default=0, help="number of steps from 0 to eps")
    s.add_argument("--figure")
    s.add_argument("-o", "--out", help="output prefix")

    s = add("variation", cmd_variation, "first- or second-order log-det variation")
    s.add_argument("graph")
    s.add_argument("--field1")
    s.add_argument("--field2")
    s.add_argument("--order", type=int, default=1, choices=[1, 2])
    s.add_argument("--kind", choices=["beltrami", "conformal", "kahler"])
    s.add_argument("--oracle", action="store_true", help="compare with finite differences of Dirichlet log-dets")
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-3)
    s.add_argument("-o", "--out")

    s = add("scaling", cmd_scaling, "central-charge fit over a sweep of scales")
    s.add_argument("--lattice", default="square", choices=["square", "triangular", "quad_tiling", "custom_rhombic"])
    s.add_argument("--alpha")
    s.add_argument("--kind", choices=["beltrami", "kahler"])
    s.add_argument("--field1")
    s.add_argument("--field2")
    s.add_argument("--ell", default="4,8,16")
    s.add_argument("--band", default="-2.2,-1.8")
    s.add_argument("--skip-continuum", action="store_true")
    s.add_argument("--figure")
    s.add_argument("-o", "--out")

    s = add("anomaly", cmd_anomaly, "anomalous chord terms on a quadrilateral tiling")
    s.add_argument("--alpha")
    s.add_argument("--phi", type=float, default=-math.pi / 5)
    s.add_argument("--separation", type=float, default=5.0)
    s.add_argument("--ell", default="2,3,4")
    s.add_argument("--pairs", type=int, default=50)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--figure")
    s.add_argument("-o", "--out", help="output prefix")
    return p


def _apply_config(parser, argv):
    """Parse once to find ``--config``, then re-parse with its values as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    sub.set_defaults(**{k: (json.dumps(v) if isinstance(v, dict) else v) for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        man = Manifest(args)
        code = args.func(args, man)
        man.write()
        return code
    except IsoradialError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if not isinstance(exc, ValueError) else EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
