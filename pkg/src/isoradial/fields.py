"""Displacement fields for deformations ``z -> z + eps F(z)``.

Two kinds are supported. A finite field assigns a complex displacement to a finite
set of vertices. A smooth field is a closed-form profile ``P`` on the unit disk (or
the whole plane), placed and scaled as ``F_l(z) = l * F(z / l)`` with
``F(w) = amp * rho * P((w - center) / rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import sympy as sym
from scipy.optimize import minimize

from .errors import ConfigError, ZeroField

_X, _Y = sym.symbols("x y", real=True)


def _profile_expr(name: str, phi: float):
    w = _X + sym.I * _Y
    r2 = _X ** 2 + _Y ** 2
    if name == "mollified_shear":
        return sym.exp(sym.I * phi + r2 / (r2 - 1)) * _Y, True
    if name == "bump":
        return sym.exp(sym.I * phi) * sym.exp(-1 / (1 - r2)) * sym.E, True
    if name == "shear":
        return sym.exp(sym.I * phi) * _Y, False
    if name == "rotation":
        return sym.I * w, False
    if name == "conformal_square":
        return w ** 2, False
    if name == "anti_square":
        return sym.conjugate(w) ** 2, False
    raise ConfigError(f"unknown smooth profile {name!r}")


@lru_cache(maxsize=None)
def _compiled(name: str, phi: float):
    """Numeric callables for the profile and its first and second Wirtinger derivatives."""
    expr, compact = _profile_expr(name, phi)
    px, py = sym.diff(expr, _X), sym.diff(expr, _Y)
    pxx, pxy, pyy = sym.diff(px, _X), sym.diff(px, _Y), sym.diff(py, _Y)
    parts = {
        "f": expr,
        "d": (px - sym.I * py) / 2,
        "db": (px + sym.I * py) / 2,
        "dd": (pxx - 2 * sym.I * pxy - pyy) / 4,
        "ddb": (pxx + pyy) / 4,
        "dbdb": (pxx + 2 * sym.I * pxy - pyy) / 4,
    }
    funcs = {k: sym.lambdify((_X, _Y), sym.simplify(v) if k == "f" else v, "numpy") for k, v in parts.items()}
    return funcs, compact


def _evaluate(name, phi, part, w):
    funcs, compact = _compiled(name, float(phi))
    w = np.asarray(w, dtype=complex)
    out = np.zeros(w.shape, dtype=complex)
    inside = np.abs(w) < 1.0 if compact else np.ones(w.shape, dtype=bool)
    if np.any(inside):
        vals = funcs[part](w.real[inside], w.imag[inside])
        out[inside] = np.broadcast_to(np.asarray(vals, dtype=complex), (int(inside.sum()),))
    return out


@lru_cache(maxsize=None)
def _profile_bounds(name: str, phi: float, grid: int = 401):
    """Sup of |dP|, |dbP| (first) and of the three second derivatives over the unit disk."""
    t = np.linspace(-1, 1, grid)
    X, Y = np.meshgrid(t, t)
    w = (X + 1j * Y).ravel()
    w = w[np.abs(w) < 1.0]

    def sup(parts):
        vals = np.max([np.abs(_evaluate(name, phi, p, w)) for p in parts], axis=0)
        best = float(vals.max())
        for k in np.argsort(vals)[-4:]:
            res = minimize(
                lambda v: -max(abs(_evaluate(name, phi, p, np.array([v[0] + 1j * v[1]]))[0]) for p in parts),
                [w[k].real, w[k].imag], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-14},
            )
            best = max(best, -float(res.fun))
        return best

    return sup(("d", "db")), sup(("dd", "ddb", "dbdb"))


class Field:
    """Base class: a complex displacement per vertex."""

    def values(self, graph) -> np.ndarray:
        raise NotImplementedError

    def support(self, graph, tol: float = 0.0) -> np.ndarray:
        """Indices of vertices moved by the field."""
        return np.flatnonzero(np.abs(self.values(graph)) > tol)

    def __add__(self, other):
        return SumField([self, other])


@dataclass
class FiniteField(Field):
    """Displacements on finitely many vertices, keyed by vertex index."""

    displacement: dict

    def values(self, graph) -> np.ndarray:
        out = np.zeros(graph.n_vertices, dtype=complex)
        for v, d in self.displacement.items():
            out[int(v)] = complex(d)
        return out

    def to_json(self, graph=None) -> dict:
        ids = graph.ids if graph is not None else None
        vals = {}
        for v, d in sorted(self.displacement.items()):
            key = ids[v] if ids is not None else v
            vals[str(key)] = [float(complex(d).real), float(complex(d).imag)]
        return {"mode": "finite", "values": vals}


@dataclass
class SmoothField(Field):
    """``F_l(z) = l * amp * rho * P((z / l - center) / rho)``.

    ``ell`` is the scaling parameter, ``rho`` the support radius before scaling.
    """

    name: str = "mollified_shear"
    phi: float = 0.0
    ell: float = 1.0
    center: complex = 0j
    rho: float = 1.0
    amp: float = 1.0

    def _w(self, z):
        return (np.asarray(z, dtype=complex) / self.ell - self.center) / self.rho

    def __call__(self, z) -> np.ndarray:
        return self.ell * self.amp * self.rho * _evaluate(self.name, self.phi, "f", self._w(z))

    def d(self, z):
        return self.amp * _evaluate(self.name, self.phi, "d", self._w(z))

    def dbar(self, z):
        return self.amp * _evaluate(self.name, self.phi, "db", self._w(z))

    def second(self, z):
        """``(d^2 F, d dbar F, dbar^2 F)`` at z."""
        s = self.amp / (self.ell * self.rho)
        w = self._w(z)
        return tuple(s * _evaluate(self.name, self.phi, p, w) for p in ("dd", "ddb", "dbdb"))

    @property
    def compact(self) -> bool:
        return _compiled(self.name, float(self.phi))[1]

    @property
    def support_radius(self) -> float:
        return self.ell * self.rho if self.compact else math.inf

    @property
    def support_center(self) -> complex:
        return self.ell * self.center

    def bounds(self):
        """``(M1, M2)``: sups of first and of second Wirtinger derivatives.

        Only meaningful for compact profiles; global profiles are bounded on the
        unit disk of the profile variable.
        """
        m1, m2 = _profile_bounds(self.name, float(self.phi))
        return self.amp * m1, self.amp * m2 / (self.ell * self.rho)

    def check_bounds(self):
        """``(max |dF| + max |dbar F|)`` used by the angle-bounded threshold."""
        t = np.linspace(-1, 1, 301)
        X, Y = np.meshgrid(t, t)
        w = (X + 1j * Y).ravel()
        w = w[np.abs(w) < 1]
        a = np.abs(_evaluate(self.name, self.phi, "d", w)).max()
        b = np.abs(_evaluate(self.name, self.phi, "db", w)).max()
        return self.amp * (a + b)

    def values(self, graph) -> np.ndarray:
        return self(graph.z)

    def to_json(self, graph=None) -> dict:
        return {"mode": "smooth", "name": self.name, "phi": self.phi, "ell": self.ell,
                "center": [self.center.real, self.center.imag], "rho": self.rho, "amp": self.amp}


@dataclass
class SumField(Field):
    parts: list = field(default_factory=list)

    def values(self, graph) -> np.ndarray:
        return sum(p.values(graph) for p in self.parts)


def field_from_json(doc: dict, graph=None) -> Field:
    """Build a field from its JSON description; finite fields key vertices by id."""
    mode = doc.get("mode")
    if mode == "finite":
        if "values" not in doc:
            raise ConfigError("finite field needs 'values'")
        pos = {i: k for k, i in enumerate(graph.ids)} if graph is not None else None
        disp = {}
        for key, val in doc["values"].items():
            v = int(key)
            if pos is not None:
                if v not in pos:
                    raise ConfigError(f"field.values: unknown vertex id {v}")
                v = pos[v]
            disp[v] = complex(val[0], val[1])
        return FiniteField(disp)
    if mode == "smooth":
        c = doc.get("center", [0.0, 0.0])
        try:
            return SmoothField(
                name=doc.get("name", "mollified_shear"), phi=float(doc.get("phi", 0.0)),
                ell=float(doc.get("ell", 1.0)), center=complex(c[0], c[1]),
                rho=float(doc.get("rho", 1.0)), amp=float(doc.get("amp", 1.0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"field: {exc}") from None
    raise ConfigError(f"field.mode must be 'finite' or 'smooth', got {mode!r}")


def require_nonzero(vals: np.ndarray) -> None:
    if not np.any(np.abs(vals) > 0):
        raise ZeroField("the displacement field vanishes on every vertex")
