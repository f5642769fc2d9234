"""Domains centred at the origin, radial and Cartesian grids, sphere and
volume quadrature."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import special

OMEGA_2 = 4.0 * math.pi  # area of the unit 2-sphere


class GeometryError(ValueError):
    """A sphere, source point or evaluation point leaves the admissible region."""


# --------------------------------------------------------------------------
# sphere rules
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereRule:
    """Gauss-Legendre in cos(theta) times the trapezoid rule in phi.

    Exact for spherical polynomials of degree < min(2 * n_theta, n_phi).
    """

    n_theta: int = 32
    n_phi: int = 64
    directions: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu, wmu = np.polynomial.legendre.leggauss(self.n_theta)
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        M, P = np.meshgrid(mu, phi, indexing="ij")
        s = np.sqrt(1.0 - M**2)
        dirs = np.stack([s * np.cos(P), s * np.sin(P), M], axis=-1).reshape(-1, 3)
        w = (wmu[:, None] * np.full(self.n_phi, 2.0 * np.pi / self.n_phi)[None, :]).ravel()
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "weights", w)

    @property
    def angles(self):
        mu, _ = np.polynomial.legendre.leggauss(self.n_theta)
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        return np.arccos(mu), phi


DEFAULT_RULE = SphereRule()


# --------------------------------------------------------------------------
# domains
# --------------------------------------------------------------------------

def _real_harmonic(l: int, m: int, theta, phi):
    # unnormalised: P_l^|m|(cos theta) * (cos m phi | sin |m| phi)
    p = special.lpmv(abs(m), l, np.cos(theta))
    if m > 0:
        return p * np.cos(m * phi)
    if m < 0:
        return p * np.sin(-m * phi)
    return p


def _direction_angles(dirs):
    dirs = np.atleast_2d(dirs)
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    return theta, phi


@dataclass(frozen=True)
class Domain:
    """Unit ball or a domain bounded by the radial graph ``r = R(direction)``.

    ``coefficients`` maps ``(l, m)`` to the weight of the unnormalised real
    harmonic ``P_l^|m|(cos theta) trig(m phi)`` in ``R``.
    """

    kind: str = "unit_ball"
    coefficients: Mapping[tuple, float] | None = None
    radius_fn: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("unit_ball", "star_shaped"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "star_shaped" and self.coefficients is None and self.radius_fn is None:
            raise ValueError("star_shaped domain needs coefficients or radius_fn")

    @classmethod
    def unit_ball(cls) -> "Domain":
        return cls("unit_ball")

    @classmethod
    def from_coefficients(cls, coefficients: Mapping) -> "Domain":
        coeffs = {tuple(int(v) for v in k): float(c) for k, c in coefficients.items()}
        return cls("star_shaped", coefficients=coeffs)

    @property
    def is_unit_ball(self) -> bool:
        return self.kind == "unit_ball"

    def boundary_radius(self, dirs) -> np.ndarray:
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        if self.is_unit_ball:
            return np.ones(dirs.shape[0])
        if self.radius_fn is not None:
            return np.asarray(self.radius_fn(dirs), dtype=float)
        theta, phi = _direction_angles(dirs)
        return self._radius_angles(theta, phi)

    def _radius_angles(self, theta, phi):
        if self.radius_fn is not None:
            s = np.sin(theta)
            d = np.stack([s * np.cos(phi), s * np.sin(phi), np.cos(theta)], axis=-1)
            return np.asarray(self.radius_fn(d.reshape(-1, 3)), dtype=float).reshape(np.shape(theta))
        out = np.zeros(np.broadcast(theta, phi).shape)
        for (l, m), c in self.coefficients.items():
            out = out + c * _real_harmonic(l, m, theta, phi)
        return out

    def max_radius(self, rule: SphereRule = SphereRule(64, 128)) -> float:
        if self.is_unit_ball:
            return 1.0
        return float(np.max(self.boundary_radius(rule.directions)))

    def contains(self, points, margin: float = 0.0) -> np.ndarray:
        """Strict interior test with an inward safety margin."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.linalg.norm(pts, axis=1)
        if self.is_unit_ball:
            return r < 1.0 - margin
        with np.errstate(invalid="ignore", divide="ignore"):
            dirs = np.where(r[:, None] > 0, pts / np.where(r > 0, r, 1.0)[:, None], [0.0, 0.0, 1.0])
        return r < self.boundary_radius(dirs) - margin

    def distance_to_boundary(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_unit_ball:
            return 1.0 - np.linalg.norm(pts, axis=1)
        bpts, _, _ = self.boundary_quadrature(SphereRule(48, 96))
        out = np.empty(pts.shape[0])
        for k in range(0, pts.shape[0], 2048):
            d = pts[k:k + 2048, None, :] - bpts[None, :, :]
            out[k:k + 2048] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", d, d), axis=1))
        return np.where(self.contains(pts), out, -out)

    def boundary_quadrature(self, rule: SphereRule = DEFAULT_RULE):
        """Boundary points, outward unit normals and surface weights."""
        dirs = rule.directions
        if self.is_unit_ball:
            return dirs.copy(), dirs.copy(), rule.weights.copy()
        theta, phi = _direction_angles(dirs)
        step = 1e-5
        R = self._radius_angles(theta, phi)
        R_t = (self._radius_angles(theta + step, phi) - self._radius_angles(theta - step, phi)) / (2 * step)
        R_p = (self._radius_angles(theta, phi + step) - self._radius_angles(theta, phi - step)) / (2 * step)
        st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
        n = np.stack([st * cp, st * sp, ct], axis=-1)
        n_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
        n_p = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=-1)
        x_t = R_t[:, None] * n + R[:, None] * n_t
        x_p = R_p[:, None] * n + R[:, None] * n_p
        cross = np.cross(x_t, x_p)
        area = np.linalg.norm(cross, axis=1)
        normals = cross / area[:, None]
        # rule weights integrate d(mu) d(phi) = sin(theta) d(theta) d(phi)
        weights = rule.weights * area / st
        return R[:, None] * n, normals, weights

    def star_certificate(self, rule: SphereRule = SphereRule(48, 96)):
        """``(ok, min <x, nu>)`` over sampled boundary points."""
        pts, normals, _ = self.boundary_quadrature(rule)
        xn = np.einsum("ij,ij->i", pts, normals)
        R = self.boundary_radius(rule.directions)
        ok = bool(np.all(R > 0) and np.all(xn > 0) and np.all(np.isfinite(xn)))
        return ok, float(np.min(xn))

    def to_config(self) -> dict:
        if self.is_unit_ball:
            return {"domain": "unit_ball"}
        if self.coefficients is None:
            return {"domain": "star_shaped", "coefficients": "callable"}
        return {"domain": "star_shaped",
                "coefficients": {f"{l},{m}": c for (l, m), c in self.coefficients.items()}}


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialGrid:
    """Increasing radii in (0, R]; graded towards the origin when it is
    meant to reach it."""

    nodes: np.ndarray
    reaches_origin: bool = True

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("radial grid needs at least 3 nodes")
        if np.any(np.diff(nodes) <= 0) or nodes[0] <= 0:
            raise ValueError("radial nodes must be positive and strictly increasing")
        if self.reaches_origin and nodes[0] > 1e-3 * nodes[-1]:
            raise ValueError("first node must lie within 1e-3 R of the origin")

    @property
    def R(self) -> float:
        return float(self.nodes[-1])

    def __len__(self):
        return self.nodes.size

    @classmethod
    def graded(cls, R: float = 1.0, n: int = 4001, r_first: float | None = None,
               n_cluster: int | None = None) -> "RadialGrid":
        """Geometric cluster from ``r_first`` up to one uniform spacing, then
        uniform to ``R``; ``n`` nodes in total."""
        if n_cluster is None:
            n_cluster = max(20, n // 20)
        n_uniform = n - n_cluster
        if n_uniform < 3:
            raise ValueError("too few nodes for a graded grid")
        dr = R / n_uniform
        if r_first is None:
            r_first = 1e-6 * R
        r_first = min(r_first, 1e-3 * R, 0.5 * dr)
        cluster = np.geomspace(r_first, dr, n_cluster + 1)[:-1]
        uniform = dr * np.arange(1, n_uniform + 1)
        uniform[-1] = R
        return cls(np.concatenate([cluster, uniform]))

    @classmethod
    def uniform(cls, R: float, n: int, r_inner: float | None = None) -> "RadialGrid":
        if r_inner is None:
            nodes = np.linspace(0.0, R, n + 1)[1:]
            return cls(nodes, reaches_origin=bool(nodes[0] <= 1e-3 * R))
        return cls(np.linspace(r_inner, R, n), reaches_origin=False)

    def simpson_weights(self) -> np.ndarray:
        """Weights ``w`` with ``sum(w f) ~ int_0^R f 4 pi r^2 dr``."""
        return _simpson_weights(self.nodes) * 4.0 * np.pi * self.nodes**2 + self._origin_cap()

    def _origin_cap(self) -> np.ndarray:
        cap = np.zeros(self.nodes.size)
        if self.reaches_origin:
            cap[0] = 4.0 * np.pi * self.nodes[0] ** 3 / 3.0
        return cap


def _simpson_weights(x):
    n = x.size
    w = np.zeros(n)
    # pairs of intervals [x0, x1, x2] with the non-uniform Simpson formula
    last = n - 1 if (n - 1) % 2 == 0 else n - 2
    for k in range(0, last, 2):
        h0 = x[k + 1] - x[k]
        h1 = x[k + 2] - x[k + 1]
        hs = h0 + h1
        w[k] += hs / 6.0 * (2.0 - h1 / h0)
        w[k + 1] += hs / 6.0 * hs**2 / (h0 * h1)
        w[k + 2] += hs / 6.0 * (2.0 - h0 / h1)
    if last != n - 1:
        # odd interval count: close the final interval with a quadratic through
        # the last three nodes, exactly integrated over [x_{n-2}, x_{n-1}]
        a, b, c = x[-3], x[-2], x[-1]
        h0, h1 = b - a, c - b
        w[-1] += (2 * h1**2 + 3 * h0 * h1) / (6 * (h0 + h1))
        w[-2] += (h1**2 + 3 * h0 * h1) / (6 * h0)
        w[-3] -= h1**3 / (6 * h0 * (h0 + h1))
    return w


class Grid3D:
    """Uniform lattice on a box covering the domain.

    ``interior`` marks nodes strictly inside the domain; ``boundary`` marks
    exterior nodes with at least one interior axis neighbour; solvers place
    Dirichlet data at the crossings of grid lines with the boundary.
    """

    def __init__(self, domain: Domain, spacing: float, pad: int = 3):
        self.domain = domain
        self.spacing = float(spacing)
        half = int(math.ceil(domain.max_radius() / spacing)) + pad
        self.axis = spacing * np.arange(-half, half + 1)
        self.shape = (self.axis.size,) * 3
        X, Y, Z = np.meshgrid(self.axis, self.axis, self.axis, indexing="ij")
        self.points = np.stack([X, Y, Z], axis=-1)
        inside = domain.contains(self.points.reshape(-1, 3)).reshape(self.shape)
        self.interior = inside
        nb = np.zeros(self.shape, dtype=bool)
        for ax in range(3):
            nb |= np.roll(inside, 1, axis=ax) | np.roll(inside, -1, axis=ax)
        self.boundary = nb & ~inside

    @property
    def origin(self) -> float:
        return float(self.axis[0])

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    def index_of(self, point) -> tuple:
        idx = np.rint((np.asarray(point, dtype=float) - self.origin) / self.spacing).astype(int)
        return tuple(idx)

    def fractional_index(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - self.origin) / self.spacing


# --------------------------------------------------------------------------
# evaluation helpers and quadrature
# --------------------------------------------------------------------------

def evaluate_at(fld, points) -> np.ndarray:
    """Evaluate a sampled field or a plain callable at 3D points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if hasattr(fld, "at_points"):
        return fld.at_points(pts)
    out = fld(pts)
    if hasattr(out, "val"):
        return out.val
    return np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],)).copy()


def sphere_average(fld, center, r: float, domain: Domain | None = None,
                   rule: SphereRule = DEFAULT_RULE) -> float:
    """Mean of ``fld`` over the sphere of radius ``r`` about ``center``."""
    if r <= 0:
        raise GeometryError("sphere radius must be positive")
    center = np.asarray(center, dtype=float)
    if domain is None:
        domain = getattr(getattr(fld, "grid", None), "domain", None)
    pts = center + r * rule.directions
    if domain is not None and not np.all(domain.contains(pts, margin=-1e-12)):
        raise GeometryError(f"sphere B({center.tolist()}, {r}) leaves the domain")
    vals = evaluate_at(fld, pts)
    return float(np.dot(rule.weights, vals) / OMEGA_2)


def volume_integral(fld, domain: Domain | None = None, weight=None,
                    n_radial: int = 64, rule: SphereRule = DEFAULT_RULE) -> float:
    """Quadrature of ``int_Omega fld * weight dx``.

    Radial fields use composite Simpson on their own graded grid with the
    4 pi r^2 weight.  Cartesian fields and callables use Gauss-Legendre in
    the radius times the sphere rule, following the boundary graph.
    """
    grid = getattr(fld, "grid", None)
    if isinstance(grid, RadialGrid):
        vals = np.asarray(fld.values, dtype=float)
        if weight is not None:
            wv = weight.values if hasattr(weight, "values") else weight(grid.nodes)
            vals = vals * np.asarray(wv, dtype=float)
        return float(np.dot(grid.simpson_weights(), vals))
    if domain is None:
        domain = getattr(grid, "domain", None)
    if domain is None:
        raise GeometryError("volume_integral of a callable needs a domain")
    t, wt = np.polynomial.legendre.leggauss(n_radial)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    dirs = rule.directions
    R = domain.boundary_radius(dirs)
    total = 0.0
    for k in range(n_radial):
        rk = t[k] * R
        pts = rk[:, None] * dirs
        vals = evaluate_at(fld, pts)
        if weight is not None:
            vals = vals * evaluate_at(weight, pts)
        total += wt[k] * np.dot(rule.weights, vals * rk**2 * R)
    return float(total)


def surface_integral(integrand: Callable, domain: Domain, rule: SphereRule = DEFAULT_RULE):
    """``int_{boundary} integrand(points, normals) dsigma``; vector integrands allowed."""
    pts, normals, w = domain.boundary_quadrature(rule)
    vals = np.asarray(integrand(pts, normals), dtype=float)
    return np.tensordot(w, vals, axes=(0, 0))
