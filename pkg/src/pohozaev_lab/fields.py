"""Sampled scalar fields, the potential ``h`` and their file formats."""
from __future__ import annotations

import ast
import csv
import json
import math
import operator
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import interpolate, ndimage

from .geometry import Domain, GeometryError, Grid3D, RadialGrid

CONVENTION = "analyst-laplacian"


class ExtrapolationError(GeometryError):
    pass


# --------------------------------------------------------------------------
# radial fields
# --------------------------------------------------------------------------

def _first_derivative(x, y):
    """Second-order three-point derivative on a non-uniform grid."""
    d = np.empty_like(y)
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    d[1:-1] = (-h1 / (h0 * (h0 + h1)) * y[:-2]
               + (h1 - h0) / (h0 * h1) * y[1:-1]
               + h0 / (h1 * (h0 + h1)) * y[2:])
    d[0] = _one_sided(x[:3], y[:3], 0)
    d[-1] = _one_sided(x[-3:], y[-3:], 2)
    return d


def _one_sided(x3, y3, k):
    # derivative at x3[k] of the quadratic through three points
    a, b, c = x3
    xk = x3[k]
    la = ((xk - b) + (xk - c)) / ((a - b) * (a - c))
    lb = ((xk - a) + (xk - c)) / ((b - a) * (b - c))
    lc = ((xk - a) + (xk - b)) / ((c - a) * (c - b))
    return la * y3[0] + lb * y3[1] + lc * y3[2]


@dataclass(frozen=True)
class ScalarFieldRadial:
    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise ValueError("values do not match the radial grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("radial field has non-finite values")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_spline", interpolate.CubicSpline(self.grid.nodes, vals))

    @classmethod
    def from_function(cls, grid: RadialGrid, f: Callable) -> "ScalarFieldRadial":
        return cls(grid, np.asarray(f(grid.nodes), dtype=float))

    @property
    def nodes(self):
        return self.grid.nodes

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        tol = 1e-12 * self.grid.R
        if np.any(r < self.grid.nodes[0] - tol) or np.any(r > self.grid.R + tol):
            raise ExtrapolationError(
                f"radial field evaluated outside [{self.grid.nodes[0]:.3g}, {self.grid.R:.3g}]")
        return self._spline(np.clip(r, self.grid.nodes[0], self.grid.R))

    def at_points(self, points) -> np.ndarray:
        return self(np.linalg.norm(np.atleast_2d(points), axis=1))

    def derivative(self) -> np.ndarray:
        """du/dr at the nodes; even reflection at the origin when the grid reaches it."""
        x, y = self.grid.nodes, self.values
        d = _first_derivative(x, y)
        if self.grid.reaches_origin:
            d[0] = _one_sided(np.array([-x[0], x[0], x[1]]), np.array([y[0], y[0], y[1]]), 1)
        return d

    def with_values(self, values) -> "ScalarFieldRadial":
        return ScalarFieldRadial(self.grid, values)


# --------------------------------------------------------------------------
# Cartesian fields
# --------------------------------------------------------------------------

class ScalarField3D:
    """Values on every node of a :class:`Grid3D` box.

    Interior nodes carry the unknowns, boundary nodes their Dirichlet values;
    the remaining exterior nodes hold an extension used only for
    interpolation near the boundary.
    """

    def __init__(self, grid: Grid3D, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError("values do not match the Cartesian grid")
        if not np.all(np.isfinite(values[grid.interior | grid.boundary])):
            raise ValueError("3D field has non-finite values")
        self.grid = grid
        self.values = values
        self._coeffs = None
        self._grad_coeffs = None

    @classmethod
    def from_function(cls, grid: Grid3D, f: Callable) -> "ScalarField3D":
        vals = np.asarray(f(grid.points.reshape(-1, 3)), dtype=float)
        if hasattr(vals, "val"):
            vals = vals.val
        return cls(grid, vals.reshape(grid.shape))

    def _check(self, idx):
        n = self.grid.shape[0] - 1
        if np.any(idx < 0) or np.any(idx > n):
            raise ExtrapolationError("3D field evaluated outside its grid box")

    def at_points(self, points) -> np.ndarray:
        idx = self.grid.fractional_index(points)
        self._check(idx)
        if self._coeffs is None:
            self._coeffs = ndimage.spline_filter(self.values, order=3, mode="nearest")
        return ndimage.map_coordinates(self._coeffs, idx.T, order=3, mode="nearest", prefilter=False)

    def gradient_at(self, points) -> np.ndarray:
        idx = self.grid.fractional_index(points)
        self._check(idx)
        if self._grad_coeffs is None:
            g = np.gradient(self.values, self.grid.spacing, edge_order=2)
            self._grad_coeffs = [ndimage.spline_filter(c, order=3, mode="nearest") for c in g]
        return np.stack([ndimage.map_coordinates(c, idx.T, order=3, mode="nearest", prefilter=False)
                         for c in self._grad_coeffs], axis=-1)

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]


# --------------------------------------------------------------------------
# the potential h
# --------------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def parse_number(text: str) -> float:
    """Arithmetic on literals and ``pi`` only, e.g. ``-pi**2/2``."""
    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError(f"unsupported expression {text!r}")
    return ev(ast.parse(text.strip().replace("^", "**"), mode="eval"))


@dataclass(frozen=True)
class CoefficientH:
    """The potential ``h`` (units 1/length^2).

    kinds: ``constant`` (value c), ``radial_polynomial`` (h = sum c_k r^k),
    ``radial_table`` (a :class:`ScalarFieldRadial`), ``callable`` (points -> values).
    """

    kind: str
    data: object

    @classmethod
    def constant(cls, c: float) -> "CoefficientH":
        return cls("constant", float(c))

    @classmethod
    def polynomial(cls, coeffs) -> "CoefficientH":
        return cls("radial_polynomial", tuple(float(c) for c in coeffs))

    @classmethod
    def table(cls, fld: ScalarFieldRadial) -> "CoefficientH":
        return cls("radial_table", fld)

    @classmethod
    def from_callable(cls, f: Callable) -> "CoefficientH":
        return cls("callable", f)

    @classmethod
    def parse(cls, text: str) -> "CoefficientH":
        """``"1"``, ``"constant:-pi^2/2"`` or ``"poly:0,0,1"`` (h = |x|^2)."""
        text = text.strip()
        if ":" in text:
            kind, body = (s.strip() for s in text.split(":", 1))
        else:
            kind, body = "constant", text
        if kind in ("constant", "const"):
            return cls.constant(parse_number(body))
        if kind in ("poly", "radial_polynomial"):
            return cls.polynomial([parse_number(t) for t in body.split(",")])
        raise ValueError(f"unknown h specification {text!r}")

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.data!r}"
        if self.kind == "radial_polynomial":
            return "poly:" + ",".join(repr(c) for c in self.data)
        return self.kind

    @property
    def is_radial(self) -> bool:
        return self.kind != "callable"

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or (
            self.kind == "radial_polynomial" and all(c == 0 for c in self.data[1:]))

    @property
    def has_analytic_gradient(self) -> bool:
        return self.kind in ("constant", "radial_polynomial")

    @property
    def is_zero(self) -> bool:
        return self.is_constant and self.radial(0.0) == 0.0

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.full(r.shape, self.data)
        if self.kind == "radial_polynomial":
            return np.polynomial.polynomial.polyval(r, self.data)
        if self.kind == "radial_table":
            return self.data(r)
        raise TypeError("h is not radial")

    def radial_derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "constant":
            return np.zeros(r.shape)
        if self.kind == "radial_polynomial":
            return np.polynomial.polynomial.polyval(r, np.polynomial.polynomial.polyder(self.data))
        if self.kind == "radial_table":
            return self.data._spline(r, 1)
        raise TypeError("h is not radial")

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "callable":
            return np.asarray(self.data(pts), dtype=float)
        r = np.linalg.norm(pts, axis=1)
        if self.kind == "radial_table":
            r = np.clip(r, self.data.grid.nodes[0], self.data.grid.R)
        return self.radial(r)

    def gradient(self, points, step: float = 1e-6) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_radial:
            r = np.linalg.norm(pts, axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                e = np.where(r[:, None] > 0, pts / np.where(r > 0, r, 1.0)[:, None], 0.0)
            if self.kind == "radial_table":
                r = np.clip(r, self.data.grid.nodes[0], self.data.grid.R)
            return self.radial_derivative(r)[:, None] * e
        g = np.empty_like(pts)
        for i in range(3):
            d = np.zeros(3)
            d[i] = step
            g[:, i] = (self(pts + d) - self(pts - d)) / (2 * step)
        return g

    def x_dot_grad(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.einsum("ij,ij->i", pts, self.gradient(pts))


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def write_field_csv(fld, path: Path, tolerances: dict | None = None) -> tuple[Path, Path]:
    """Write ``fld`` as CSV plus a JSON manifest next to it."""
    path = Path(path)
    manifest = {"convention": CONVENTION, "tolerances": tolerances or {}}
    if isinstance(fld, ScalarFieldRadial):
        manifest.update(kind="radial", R=fld.grid.R, n=len(fld.grid),
                        reaches_origin=fld.grid.reaches_origin)
        rows = zip(fld.grid.nodes, fld.values)
        header = ["r", "value"]
    else:
        g = fld.grid
        manifest.update(kind="cartesian", spacing=g.spacing, shape=list(g.shape),
                        **g.domain.to_config())
        mask = g.interior | g.boundary
        idx = np.argwhere(mask)
        pts = g.points[mask]
        rows = ([*p, v] for p, v in zip(pts, fld.values[mask]))
        header = ["x", "y", "z", "value"]
        manifest["nodes"] = int(idx.shape[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    mpath = path.with_suffix(".json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path, mpath


def read_field_csv(path: Path):
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if manifest["kind"] == "radial":
        grid = RadialGrid(data[:, 0], reaches_origin=bool(manifest.get("reaches_origin", True)))
        return ScalarFieldRadial(grid, data[:, 1])
    if manifest.get("domain") == "unit_ball":
        domain = Domain.unit_ball()
    else:
        coeffs = {tuple(int(s) for s in k.split(",")): v for k, v in manifest["coefficients"].items()}
        domain = Domain.from_coefficients(coeffs)
    grid = Grid3D(domain, manifest["spacing"])
    if list(grid.shape) != manifest["shape"]:
        raise ValueError("grid in manifest does not reproduce the stored shape")
    vals = np.zeros(grid.shape)
    idx = np.rint(grid.fractional_index(data[:, :3])).astype(int)
    vals[idx[:, 0], idx[:, 1], idx[:, 2]] = data[:, 3]
    return ScalarField3D(grid, vals)
