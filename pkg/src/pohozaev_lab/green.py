"""Dirichlet Green functions of ``Delta + h`` and their mass expansions.

Near the source ``x`` every Green function here is written as

    G(x, y) = 1/|y - x| + h(x)/2 |y - x| + gamma_x(y)

(scaled normalization, ``(Delta + h) G = omega_2 delta_x``).  The mass is
``gamma_x(x)`` and ``grad_regular`` is ``grad gamma_x(x)``.  The unit
normalization divides everything by ``omega_2 = 4 pi``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .elliptic import DirichletProblem3D, IndefiniteSystemError, coercivity_check
from .fields import CoefficientH, ScalarField3D, ScalarFieldRadial
from .geometry import OMEGA_2, Domain, GeometryError, Grid3D, RadialGrid, SphereRule
from .jets import Jet

log = logging.getLogger(__name__)

SCALED = "scaled"
UNIT = "unit"
_FACTORS = {SCALED: 1.0, UNIT: 1.0 / OMEGA_2}


class SingularityError(GeometryError):
    pass


class ExpansionError(RuntimeError):
    """Least-squares fit of the regular part failed its residual test."""


class NormalizationError(ValueError):
    pass


def _check_norm(normalization):
    if normalization not in _FACTORS:
        raise NormalizationError(f"unknown normalization {normalization!r}")
    return _FACTORS[normalization]


# --------------------------------------------------------------------------
# images for the unit ball, h = 0
# --------------------------------------------------------------------------

def _image_term(x, y):
    """``1/(|x| |y - x*|)`` and its y-gradient; equals 1 when x = 0."""
    x = np.asarray(x, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    rx = float(np.linalg.norm(x))
    if rx == 0.0:
        return np.ones(y.shape[0]), np.zeros_like(y)
    q = rx * y - x / rx
    nq = np.linalg.norm(q, axis=1)
    return 1.0 / nq, -rx * q / nq[:, None] ** 3


def laplace_green_ball(x, y):
    """``1/|x-y| - 1/(|x| |y - x/|x|^2|)``: Dirichlet Green function of the
    Laplacian on the unit ball, scaled normalization.  Vectorised in ``y``."""
    x = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    ys = np.atleast_2d(y_arr)
    d = np.linalg.norm(ys - x, axis=1)
    if np.any(d == 0):
        raise SingularityError("Green function evaluated at its source")
    out = 1.0 / d - _image_term(x, ys)[0]
    return float(out[0]) if y_arr.ndim == 1 else out


def ball_mass(x) -> float:
    """Scaled mass of the unit-ball Laplace Green function, ``-1/(1-|x|^2)``."""
    r2 = float(np.dot(x, x))
    return -1.0 / (1.0 - r2)


def ball_grad_regular(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -x / (1.0 - float(np.dot(x, x))) ** 2


# --------------------------------------------------------------------------
# expansion data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GreenExpansion:
    source: tuple
    mass: float
    grad_regular: tuple
    h_at_source: float
    normalization: str = SCALED
    fit_residual: float = 0.0

    def __post_init__(self):
        _check_norm(self.normalization)
        object.__setattr__(self, "source", tuple(float(v) for v in self.source))
        object.__setattr__(self, "grad_regular", tuple(float(v) for v in self.grad_regular))

    def to(self, normalization: str) -> "GreenExpansion":
        f = _check_norm(normalization) / _check_norm(self.normalization)
        return GreenExpansion(self.source, self.mass * f, tuple(f * g for g in self.grad_regular),
                              self.h_at_source, normalization, self.fit_residual * f)

    def to_json(self) -> str:
        return json.dumps({"source": list(self.source), "mass": self.mass,
                           "grad_regular": list(self.grad_regular), "h_at_source": self.h_at_source,
                           "normalization": self.normalization, "fit_residual": self.fit_residual})

    @classmethod
    def from_json(cls, text: str) -> "GreenExpansion":
        d = json.loads(text)
        return cls(tuple(d["source"]), d["mass"], tuple(d["grad_regular"]), d.get("h_at_source", 0.0),
                   d["normalization"], d.get("fit_residual", 0.0))


# --------------------------------------------------------------------------
# Green fields
# --------------------------------------------------------------------------

class GreenField:
    """``G(x, .)`` for a fixed source.  Subclasses supply the regular part
    ``gamma_x`` and its gradient in scaled normalization."""

    kind = "abstract"

    def __init__(self, source, h: CoefficientH, domain: Domain, normalization: str = SCALED):
        self.source = np.asarray(source, dtype=float)
        self.h = h
        self.domain = domain
        self.normalization = normalization
        self.factor = _check_norm(normalization)
        self.h_source = float(h(self.source[None, :])[0])

    # subclasses ---------------------------------------------------------
    def regular(self, points) -> np.ndarray:
        raise NotImplementedError

    def regular_gradient(self, points) -> np.ndarray:
        raise NotImplementedError

    def exact_expansion(self):
        """Closed-form expansion when the construction provides one."""
        return None

    # shared -------------------------------------------------------------
    def renormalized(self, normalization: str) -> "GreenField":
        import copy
        other = copy.copy(self)
        other.normalization = normalization
        other.factor = _check_norm(normalization)
        return other

    def _offsets(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        z = pts - self.source
        d = np.linalg.norm(z, axis=1)
        if np.any(d == 0):
            raise SingularityError("Green function evaluated at its source")
        return pts, z, d

    def __call__(self, points) -> np.ndarray:
        pts, z, d = self._offsets(points)
        return self.factor * (1.0 / d + 0.5 * self.h_source * d + self.regular(pts))

    at_points = __call__

    def gradient(self, points) -> np.ndarray:
        pts, z, d = self._offsets(points)
        e = z / d[:, None]
        g = (-1.0 / d**2 + 0.5 * self.h_source)[:, None] * e + self.regular_gradient(pts)
        return self.factor * g

    def jet(self, points) -> Jet:
        """Value, gradient and Laplacian; off the source ``Delta G = -h G``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        val = self(pts)
        return Jet(val, self.gradient(pts), -self.h(pts) * val)


class ImagesGreen(GreenField):
    kind = "images"

    def __init__(self, source, domain: Domain | None = None, normalization: str = SCALED):
        super().__init__(source, CoefficientH.constant(0.0), domain or Domain.unit_ball(), normalization)

    def regular(self, points):
        return -_image_term(self.source, points)[0]

    def regular_gradient(self, points):
        return -_image_term(self.source, points)[1]

    def exact_expansion(self):
        return GreenExpansion(self.source, ball_mass(self.source), ball_grad_regular(self.source),
                              0.0).to(self.normalization)


class RadialGreen(GreenField):
    """Source at the origin of the unit ball, radial ``h``.

    ``G = w(r)/r`` with ``w'' = h w``, ``w(0) = 1``, ``w(1) = 0``; the mass is
    ``w'(0)``.  Constant ``h`` uses closed forms, otherwise two shooting
    solutions are superposed.
    """

    kind = "radial"

    def __init__(self, h: CoefficientH, normalization: str = SCALED, rtol: float = 1e-12):
        super().__init__(np.zeros(3), h, Domain.unit_ball(), normalization)
        self._closed = None
        if h.is_constant:
            self._closed = float(h.radial(0.0))
            self.slope = self._closed_slope(self._closed)
        else:
            def rhs(r, y):
                hr = float(h.radial(r))
                return [y[1], hr * y[0], y[3], hr * y[2]]
            sol = integrate.solve_ivp(rhs, (0.0, 1.0), [1.0, 0.0, 0.0, 1.0], method="DOP853",
                                      rtol=rtol, atol=1e-14, dense_output=True)
            w1_end, w2_end = sol.y[0, -1], sol.y[2, -1]
            if w2_end <= 0:
                raise IndefiniteSystemError("Delta + h is not coercive on the unit ball")
            self.slope = -w1_end / w2_end
            self._sol = sol

    @staticmethod
    def _closed_slope(c):
        if c == 0:
            return -1.0
        k = math.sqrt(abs(c))
        if c > 0:
            return -k / math.tanh(k)
        if k >= math.pi:
            raise IndefiniteSystemError("Delta + h is not coercive on the unit ball")
        return -k / math.tan(k)

    def w(self, r):
        """``w`` and ``w'`` at radii ``r``."""
        r = np.asarray(r, dtype=float)
        if self._closed is not None:
            c, s = self._closed, self.slope
            if c == 0:
                return 1.0 + s * r, np.full(r.shape, s)
            k = math.sqrt(abs(c))
            if c > 0:
                return np.cosh(k * r) + s / k * np.sinh(k * r), k * np.sinh(k * r) + s * np.cosh(k * r)
            return np.cos(k * r) + s / k * np.sin(k * r), -k * np.sin(k * r) + s * np.cos(k * r)
        y = self._sol.sol(r)
        return y[0] + self.slope * y[2], y[1] + self.slope * y[3]

    def _regular_radial(self, r):
        w, dw = self.w(r)
        c = self._closed
        if c is not None and c == 0:
            return np.full(r.shape, self.slope), np.zeros(r.shape)
        # gamma(r) = (w - 1)/r - h(0) r / 2, gamma'(r) = (w' r - w + 1)/r^2 - h(0)/2
        return (w - 1.0) / r - 0.5 * self.h_source * r, (dw * r - w + 1.0) / r**2 - 0.5 * self.h_source

    def regular(self, points):
        r = np.linalg.norm(np.atleast_2d(points), axis=1)
        return self._regular_radial(r)[0]

    def regular_gradient(self, points):
        pts = np.atleast_2d(points)
        r = np.linalg.norm(pts, axis=1)
        return self._regular_radial(r)[1][:, None] * pts / r[:, None]

    def radial_values(self, r):
        w, _ = self.w(r)
        return self.factor * w / r

    def field_on(self, grid: RadialGrid) -> ScalarFieldRadial:
        return ScalarFieldRadial(grid, self.radial_values(grid.nodes))

    @property
    def field(self) -> ScalarFieldRadial:
        return self.field_on(RadialGrid.graded(1.0, 4001))

    def exact_expansion(self):
        return GreenExpansion(self.source, self.slope, (0.0, 0.0, 0.0), self.h_source).to(self.normalization)


class CartesianGreen(GreenField):
    """Regular part solved on a :class:`Grid3D`.

    ``gamma_x = -I + xi`` with ``I`` the unit-ball image term (``split =
    "images"``) or ``gamma_x = xi`` (``split = "free"``), where ``xi``
    solves ``(Delta + h) xi = (h(x) - h(y))/|z| - h(x) h(y) |z|/2 [+ h I]``
    with the matching boundary data.  The right-hand side is bounded, so the
    grid never sees the singularity.
    """

    kind = "cartesian"

    def __init__(self, source, h, domain, xi: ScalarField3D, split: str, normalization: str = SCALED):
        super().__init__(source, h, domain, normalization)
        self.xi = xi
        self.split = split

    def regular(self, points):
        out = self.xi.at_points(points)
        if self.split == "images":
            out = out - _image_term(self.source, points)[0]
        return out

    def regular_gradient(self, points):
        out = self.xi.gradient_at(points)
        if self.split == "images":
            out = out - _image_term(self.source, points)[1]
        return out

    @property
    def field(self) -> ScalarField3D:
        """``G`` on the grid nodes; the node at the source (if any) is capped
        by its largest neighbour."""
        g = self.xi.grid
        pts = g.points.reshape(-1, 3)
        z = np.linalg.norm(pts - self.source, axis=1)
        at_src = z < 1e-12 * g.spacing
        vals = np.zeros(pts.shape[0])
        ok = ~at_src
        vals[ok] = self(pts[ok])
        vals = vals.reshape(g.shape)
        vals[~(g.interior | g.boundary)] = 0.0
        vals[g.boundary] = 0.0
        if at_src.any():
            i, j, k = np.unravel_index(np.flatnonzero(at_src)[0], g.shape)
            vals[i, j, k] = vals[i - 1:i + 2, j - 1:j + 2, k - 1:k + 2].max()
        return ScalarField3D(g, vals)


_PROBLEM_CACHE: dict = {}


def _problem(grid_key, grid_factory, h: CoefficientH):
    if h.kind in ("constant", "radial_polynomial"):
        key = (grid_key, h.describe())
        if key not in _PROBLEM_CACHE:
            if len(_PROBLEM_CACHE) >= 4:
                _PROBLEM_CACHE.pop(next(iter(_PROBLEM_CACHE)))
            _PROBLEM_CACHE[key] = DirichletProblem3D(grid_factory(), h)
        return _PROBLEM_CACHE[key]
    return DirichletProblem3D(grid_factory(), h)


def solve_green(h: CoefficientH, x, domain: Domain | None = None, spacing: float = 1 / 32,
                method: str = "auto", split: str | None = None, normalization: str = SCALED,
                rtol: float = 1e-10) -> GreenField:
    """Green function of ``Delta + h`` with pole ``x`` and Dirichlet data.

    ``method``: ``"auto"`` (radial ODE when x = 0, h radial and the domain is
    the unit ball, Cartesian otherwise), ``"radial"``, ``"cartesian"`` or
    ``"images"`` (closed form, h = 0 on the unit ball only).
    """
    domain = domain or Domain.unit_ball()
    x = np.asarray(x, dtype=float)
    _check_norm(normalization)
    if not domain.contains(x[None, :])[0]:
        raise GeometryError("source outside the domain")
    radial_ok = domain.is_unit_ball and h.is_radial and float(np.linalg.norm(x)) == 0.0
    if method == "auto":
        method = "radial" if radial_ok else "cartesian"
    if method == "images":
        if not (domain.is_unit_ball and h.is_zero):
            raise ValueError("images formula needs h = 0 on the unit ball")
        return ImagesGreen(x, domain, normalization)
    if method == "radial":
        if not radial_ok:
            raise ValueError("radial path needs a radial h and the source at the centre of the unit ball")
        if not h.is_constant:
            rep = coercivity_check(h, domain)
            if not rep.coercive:
                raise IndefiniteSystemError(f"smallest eigenvalue {rep.smallest_eigenvalue:.4g} <= 0")
        return RadialGreen(h, normalization)
    if method != "cartesian":
        raise ValueError(f"unknown method {method!r}")

    split = split or ("images" if domain.is_unit_ball else "free")
    if split == "images" and not domain.is_unit_ball:
        raise ValueError("images split needs the unit ball")
    dist = float(domain.distance_to_boundary(x[None, :])[0])
    if dist <= 2 * spacing:
        raise GeometryError(f"source within two grid spacings of the boundary (distance {dist:.3g})")
    key = (json.dumps(domain.to_config(), sort_keys=True), float(spacing))
    problem = _problem(key, lambda: Grid3D(domain, spacing), h)
    grid = problem.grid
    if float(np.min(problem.hvals)) < 0:
        lam = problem.smallest_eigenvalue()
        if lam <= 0:
            raise IndefiniteSystemError(f"smallest eigenvalue {lam:.4g} <= 0")

    hx = float(h(x[None, :])[0])
    pts_in = grid.points[grid.interior]
    hy = problem.hvals
    d = np.linalg.norm(pts_in - x, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = np.where(d > 0, (hx - hy) / d, 0.0) - 0.5 * hx * hy * d
    if split == "images":
        rhs = rhs + hy * _image_term(x, pts_in)[0]
        bvals = lambda p: -0.5 * hx * np.linalg.norm(p - x, axis=1)
    else:
        def bvals(p):
            dz = np.linalg.norm(p - x, axis=1)
            return -1.0 / dz - 0.5 * hx * dz
    if h.is_zero and split == "images":
        sol = np.zeros(grid.n_interior)
    else:
        sol = problem.solve(rhs, bvals, rtol=rtol)
    xi = problem.to_field(sol, bvals)
    # smooth exterior extension for interpolation near the boundary
    _extend_outward(xi)
    return CartesianGreen(x, h, domain, xi, split, normalization)


def _extend_outward(fld: ScalarField3D, layers: int = 3):
    """Fill exterior nodes by averaging known axis neighbours, layer by layer."""
    g = fld.grid
    known = g.interior | g.boundary
    v = fld.values
    for _ in range(layers):
        acc = np.zeros_like(v)
        cnt = np.zeros_like(v)
        for ax in range(3):
            for s in (1, -1):
                kv = np.roll(known, s, axis=ax)
                acc += np.where(kv, np.roll(v, s, axis=ax), 0.0)
                cnt += kv
        new = ~known & (cnt > 0)
        v[new] = acc[new] / cnt[new]
        known = known | new


# --------------------------------------------------------------------------
# expansion fitting
# --------------------------------------------------------------------------

_SHELL_RULE = SphereRule(6, 12)


def extract_expansion(gf: GreenField, h: CoefficientH | None = None, r0: float | None = None,
                      n_shells: int = 5, rule: SphereRule = _SHELL_RULE,
                      fit_tol: float = 1e-2) -> GreenExpansion:
    """Fit ``G(x, x+z) - 1/|z| - h(x)|z|/2`` on shells ``|z| = r0 2^-k`` by
    weighted least squares with a full quadratic model; the constant and
    linear coefficients are the mass and ``grad_regular``.

    Weights ``1/r_k`` favour the inner shells.  Raises
    :class:`ExpansionError` when the rms fit residual exceeds
    ``fit_tol * max(1, |mass|)``.
    """
    x = gf.source
    hx = float((h or gf.h)(x[None, :])[0])
    if r0 is None:
        r0 = 0.05 * float(gf.domain.distance_to_boundary(x[None, :])[0])
    radii = r0 * 2.0 ** -np.arange(n_shells)
    z = np.concatenate([r * rule.directions for r in radii])
    wts = np.repeat(1.0 / radii, rule.directions.shape[0])
    d = np.linalg.norm(z, axis=1)
    target = gf(x + z) / gf.factor - 1.0 / d - 0.5 * hx * d
    zx, zy, zz = z.T
    A = np.stack([np.ones_like(zx), zx, zy, zz, zx * zx, zy * zy, zz * zz, zx * zy, zx * zz, zy * zz], axis=1)
    sw = np.sqrt(wts)
    coef, *_ = np.linalg.lstsq(A * sw[:, None], target * sw, rcond=None)
    resid = target - A @ coef
    rms = float(np.sqrt(np.average(resid**2, weights=wts)))
    if not np.isfinite(rms) or rms > fit_tol * max(1.0, abs(coef[0])):
        raise ExpansionError(f"expansion fit residual {rms:.3g} too large; refine the grid")
    return GreenExpansion(x, coef[0], coef[1:4], hx, SCALED, rms).to(gf.normalization)


def regular_part_defect(gf: GreenField, expansion: GreenExpansion, radius: float,
                        rule: SphereRule = _SHELL_RULE) -> float:
    """max over ``|z| = radius`` of ``|gamma_x(x+z) - m - c.z|`` (scaled)."""
    ex = expansion.to(SCALED)
    z = radius * rule.directions
    d = np.linalg.norm(z, axis=1)
    gam = gf(gf.source + z) / gf.factor - 1.0 / d - 0.5 * ex.h_at_source * d
    return float(np.max(np.abs(gam - ex.mass - z @ np.asarray(ex.grad_regular))))


@dataclass
class MassScan:
    entries: list = field(default_factory=list)  # (point, mass)
    most_negative: int = -1

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def masses(self):
        return np.array([m for _, m in self.entries])


def mass_sign_scan(h: CoefficientH, domain: Domain, sample_points, spacing: float = 1 / 32,
                   method: str = "auto") -> MassScan:
    """Scaled masses ``gamma_x(x)`` at each sample point; flags the most negative."""
    entries = []
    for p in np.atleast_2d(np.asarray(sample_points, dtype=float)):
        gf = solve_green(h, p, domain, spacing=spacing, method=method)
        ex = gf.exact_expansion() or extract_expansion(gf, h)
        entries.append((tuple(float(v) for v in p), float(ex.to(SCALED).mass)))
    masses = np.array([m for _, m in entries])
    return MassScan(entries, int(np.argmin(masses)) if len(entries) else -1)
