"""Explicit blowing-up families and their residual potentials.

Every family is assembled from :class:`~pohozaev_lab.jets.Jet` values of the
Green functions, so ``Delta u`` is exact given ``G``, ``grad G`` and
``Delta G = -h G``.  For a positive ``u`` the residual potential
``h~ = (3 u^5 - Delta u) / u`` makes ``Delta u + h~ u = 3 u^5`` hold exactly,
and ``(3^{1/4} u, h~)`` solves ``Delta v + h~ v = v^5``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .elliptic import apply_laplacian
from .fields import CoefficientH, ScalarFieldRadial
from .geometry import Domain, RadialGrid
from .green import (SCALED, GreenExpansion, GreenField, ImagesGreen, extract_expansion, mass_sign_scan,
                    solve_green)
from .jets import Jet, radial_points

log = logging.getLogger(__name__)

RESCALE = 3.0 ** 0.25


class ConstructionError(RuntimeError):
    pass


class ConfigurationNotFound(RuntimeError):
    pass


class PositivityError(ValueError):
    pass


# --------------------------------------------------------------------------
# one-dimensional profiles
# --------------------------------------------------------------------------

def _inv_sq(f: Jet) -> Jet:
    return (f * f).reciprocal()


@dataclass(frozen=True)
class ProfileFunctions:
    """``U(r) = r (1+r^2)^{-1/2}``, ``V(r) = 1 - (1+r^2)^{-3/2}``,
    ``psi(r) = 1 + ln(1 + r^{-2}) / ln(eps^2)`` and the corrector ``W``.

    The ``*_jet`` methods compose the profiles with a jet; the plain methods
    evaluate them on arrays of radii.  All forms avoid cancellation at both
    ends, so no series switches are needed.
    """

    eps: float

    @property
    def log_eps2(self) -> float:
        return 2.0 * math.log(self.eps)

    # jets -------------------------------------------------------------------
    # each profile is composed as a function of one variable so that the
    # Laplacian is ``P'(f) Delta f - P''(f) |grad f|^2`` with no cancellation
    @staticmethod
    def U_jet(f: Jet) -> Jet:
        x = f.val
        s = 1.0 + x * x
        return f.apply(x / np.sqrt(s), s**-1.5, -3.0 * x * s**-2.5)

    @staticmethod
    def V_jet(f: Jet) -> Jet:
        x = f.val
        s = 1.0 + x * x
        return f.apply(-np.expm1(-1.5 * np.log1p(x * x)), 3.0 * x * s**-2.5, 3.0 * (1.0 - 4.0 * x * x) * s**-3.5)

    @staticmethod
    def decay_jet(f: Jet) -> Jet:
        """``(1 + f^2)^{-3/2}``."""
        x = f.val
        s = 1.0 + x * x
        return f.apply(s**-1.5, -3.0 * x * s**-2.5, 3.0 * (4.0 * x * x - 1.0) * s**-3.5)

    def psi_jet(self, f: Jet) -> Jet:
        x = f.val
        s = 1.0 + x * x
        L = self.log_eps2
        return f.apply(1.0 + np.log1p(x**-2.0) / L, -2.0 / (x * s) / L, 2.0 * (1.0 + 3.0 * x * x) / (x * s) ** 2 / L)

    @staticmethod
    def _W_direct(f: Jet) -> Jet:
        # W = -13/4 U + 8 (2U^3 - U) ln U - 2 (U^-1 - 8U + 8U^3) r arctan(1/r), rewritten with
        # U^2 = f^2/(1+f^2), ln U = -log1p(f^-2)/2 and (U^-1 - 8U + 8U^3) r = (1 - 6f^2 + f^4)/(1+f^2)^{3/2}
        f2 = f * f
        s = f2 + 1.0
        U = f * s ** -0.5
        lnU = _inv_sq(f).log1p() * -0.5
        poly = f2 * f2 - 6.0 * f2 + 1.0
        return (U * -3.25 + U * (f2 - 1.0) / s * lnU * 8.0
                - poly * s ** -1.5 * f.arctan_inv() * 2.0)

    @classmethod
    def W_jet(cls, f: Jet) -> Jet:
        x = f.val
        n = x.size
        grad = np.zeros((n, 3))
        grad[:, 0] = 1.0
        w = cls._W_direct(Jet(x, grad, np.zeros(n)))
        return f.apply(w.val, w.grad[:, 0], -w.lap)

    # arrays -----------------------------------------------------------------
    @staticmethod
    def _lift(r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return Jet(r, np.zeros((r.size, 3)), np.zeros(r.size))

    def U(self, r):
        return self.U_jet(self._lift(r)).val

    def V(self, r):
        return self.V_jet(self._lift(r)).val

    def psi(self, r):
        return self.psi_jet(self._lift(r)).val

    def W(self, r):
        return self.W_jet(self._lift(r)).val


def cutoff_jet(points, center, inner: float, outer: float) -> Jet:
    """Smooth radial cutoff: 1 for ``|x - c| <= inner``, 0 for ``|x - c| >= outer``."""
    t = (Jet.distance(points, center) - inner) * (1.0 / (outer - inner))
    return 1.0 - t.smoothstep()


# --------------------------------------------------------------------------
# residual potential
# --------------------------------------------------------------------------

@dataclass
class ResidualPotential:
    h_tilde: np.ndarray
    deviation: np.ndarray
    l3_norm: float
    linf_norm: float
    min_u: float
    u: np.ndarray
    method: str

    @property
    def rescaled(self):
        """``(3^{1/4} u, h~)``, a solution pair of ``Delta v + h~ v = v^5``."""
        return RESCALE * self.u, self.h_tilde


def residual_potential(u, h_target: CoefficientH, points=None, weights=None) -> ResidualPotential:
    """``h~ = (3 u^5 - Delta u)/u`` and the norms of ``h~ - h_target``.

    ``u`` is a :class:`Jet` evaluated at ``points`` (analytic Laplacian) or a
    :class:`ScalarFieldRadial` (finite differences, radial Simpson weights).
    ``weights`` are volume weights for the L^3 norm; without them only the
    sampled sup is meaningful and ``l3_norm`` is NaN.
    """
    if isinstance(u, ScalarFieldRadial):
        lap = apply_laplacian(u).values
        vals = u.values
        grid = u.grid
        h = h_target.radial(grid.nodes)
        weights = grid.simpson_weights()
        method = "finite-difference"
        sel = slice(0, -1) if abs(vals[-1]) == 0 else slice(None)
    else:
        lap, vals = u.lap, u.val
        h = h_target(points)
        method = "analytic"
        sel = slice(None)
    if np.any(vals[sel] <= 0) or not np.all(np.isfinite(vals[sel])):
        k = int(np.argmin(np.where(np.isfinite(vals[sel]), vals[sel], -np.inf)))
        raise PositivityError(f"u is not positive on the evaluation set (sample {k})")
    ht = np.full(vals.shape, np.nan)
    ht[sel] = (3.0 * vals[sel] ** 5 - lap[sel]) / vals[sel]
    dev = ht - h
    if isinstance(u, ScalarFieldRadial) and sel != slice(None):
        dev[-1] = dev[-2]  # boundary node: 0/0, continued from the neighbour
        ht[-1] = dev[-1] + h[-1]
    linf = float(np.nanmax(np.abs(dev)))
    l3 = float(np.dot(weights, np.abs(dev) ** 3) ** (1.0 / 3.0)) if weights is not None else float("nan")
    return ResidualPotential(ht, dev, l3, linf, float(np.min(vals[sel])), vals, method)


# --------------------------------------------------------------------------
# radial family
# --------------------------------------------------------------------------

def _radial_green(h: CoefficientH) -> GreenField:
    if h.is_zero:
        return ImagesGreen(np.zeros(3))
    return solve_green(h, np.zeros(3), Domain.unit_ball(), method="radial")


@dataclass(frozen=True)
class RadialFamilyParams:
    eps: float
    green: GreenField = field(repr=False, compare=False)
    mass: float = -1.0
    h: CoefficientH = CoefficientH.constant(0.0)
    cutoff: tuple = (0.25, 0.5)

    def __post_init__(self):
        if not 0 < self.eps < 0.1:
            raise ValueError("eps must lie in (0, 0.1)")

    @classmethod
    def build(cls, h: CoefficientH, eps: float) -> "RadialFamilyParams":
        gf = _radial_green(h)
        return cls(eps, gf, float(gf.exact_expansion().mass), h)

    def with_eps(self, eps: float) -> "RadialFamilyParams":
        return RadialFamilyParams(eps, self.green, self.mass, self.h, self.cutoff)


def radial_family_jet(params: RadialFamilyParams, points) -> Jet:
    """``u = U_eps + eta_eps V_eps`` with
    ``U_eps = eps^{1/2} G (1 + eps^2 G^2)^{-1/2}``,
    ``V_eps = -m eps^{1/2} (1 + eps^2 G^2)^{-3/2}`` and
    ``eta_eps = eta(|x|) ln(eps^2 + |x|^2) / ln(eps^2)``."""
    eps = params.eps
    pts = np.atleast_2d(points)
    G = params.green.jet(pts)
    s = G * G * eps**2 + 1.0
    U = G * s ** -0.5 * math.sqrt(eps)
    V = s ** -1.5 * (-params.mass * math.sqrt(eps))
    r = Jet.distance(pts, np.zeros(3))
    eta = cutoff_jet(pts, np.zeros(3), *params.cutoff) * ((r * r + eps**2).log() * (1.0 / math.log(eps**2)))
    return U + eta * V


def family_grid(eps: float, n_inner: int = 3000, n_outer: int = 2000) -> RadialGrid:
    """Geometric nodes from ``1e-4 eps`` to ``0.05``, uniform to 1."""
    inner = np.geomspace(1e-4 * eps, 0.05, n_inner, endpoint=False)
    outer = np.linspace(0.05, 1.0, n_outer)
    return RadialGrid(np.concatenate([inner, outer]))


def radial_family(params: RadialFamilyParams, grid: RadialGrid | None = None) -> ScalarFieldRadial:
    grid = grid or family_grid(params.eps)
    r = grid.nodes.copy()
    vals = radial_family_jet(params, radial_points(r[:-1])).val
    vals = np.append(vals, 0.0) if grid.R == 1.0 else radial_family_jet(params, radial_points(r[-1:])).val
    bad = np.flatnonzero(vals[:-1] <= 0)
    if bad.size:
        raise ConstructionError(f"u_eps not positive at r = {r[bad[0]]:.6g}; decrease eps")
    return ScalarFieldRadial(grid, vals)


def radial_residual(params: RadialFamilyParams, grid: RadialGrid | None = None) -> ResidualPotential:
    """Analytic-Laplacian residual potential on a radial grid (L^3 by Simpson)."""
    grid = grid or family_grid(params.eps)
    r = grid.nodes.copy()
    r[-1] = grid.R * (1.0 - 1e-9)  # u vanishes on the sphere; h~ extends continuously
    pts = radial_points(r)
    return residual_potential(radial_family_jet(params, pts), params.h, pts, grid.simpson_weights())


# --------------------------------------------------------------------------
# balancing configuration and the two-bubble family
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoBubbleParams:
    x1: tuple
    x2: tuple
    lam: float
    eps: float
    green1: GreenField = field(repr=False, compare=False)
    green2: GreenField = field(repr=False, compare=False)
    exp1: GreenExpansion = None
    exp2: GreenExpansion = None
    delta: float = 0.0
    h: CoefficientH = CoefficientH.constant(0.0)
    domain: Domain = Domain.unit_ball()

    def with_eps(self, eps: float) -> "TwoBubbleParams":
        return TwoBubbleParams(self.x1, self.x2, self.lam, eps, self.green1, self.green2, self.exp1,
                               self.exp2, self.delta, self.h, self.domain)

    def balance_residuals(self):
        p1 = np.array(self.x1)[None, :]
        p2 = np.array(self.x2)[None, :]
        s = math.sqrt(self.lam)
        r1 = s * float(self.green2(p1)[0]) + self.exp1.mass
        r2 = float(self.green1(p2)[0]) + s * self.exp2.mass
        return r1, r2

    def describe(self) -> dict:
        return {"x1": list(self.x1), "x2": list(self.x2), "lambda": self.lam, "eps": self.eps,
                "delta": self.delta, "h": self.h.describe(), "mass1": self.exp1.mass, "mass2": self.exp2.mass,
                "grad_regular1": list(self.exp1.grad_regular), "grad_regular2": list(self.exp2.grad_regular),
                **self.domain.to_config()}


def green_provider(h: CoefficientH, domain: Domain, spacing: float = 1 / 32):
    """``x -> (GreenField, GreenExpansion)``; closed forms when available."""
    def provide(x):
        x = np.asarray(x, dtype=float)
        if domain.is_unit_ball and h.is_zero:
            gf = ImagesGreen(x, domain)
        else:
            gf = solve_green(h, x, domain, spacing=spacing)
        return gf, gf.exact_expansion() or extract_expansion(gf, h)
    return provide


def balance_configuration(h: CoefficientH, domain: Domain | None = None, eps: float = 1e-2, x1=None,
                          samples=None, direction=(1.0, 0.0, 0.0), spacing: float = 1 / 32,
                          xtol: float = 1e-14) -> TwoBubbleParams:
    """Solve ``F(x) = G(x1, x)^2 - gamma_{x1}(x1) gamma_x(x) = 0`` along a ray
    from ``x1`` and set ``lambda = (gamma_{x1}(x1) / G(x1, x2))^2``.

    ``x1`` defaults to the centre of the domain when its mass is negative,
    otherwise to the most negative mass among ``samples``.
    """
    domain = domain or Domain.unit_ball()
    provide = green_provider(h, domain, spacing)
    if x1 is None:
        g0, e0 = provide(np.zeros(3))
        if e0.mass < 0:
            x1 = np.zeros(3)
        else:
            if samples is None:
                samples = [[t, 0.0, 0.0] for t in np.linspace(0.1, 0.8, 8) * domain.max_radius()]
            scan = mass_sign_scan(h, domain, samples, spacing=spacing)
            if scan.masses[scan.most_negative] >= 0:
                raise ConfigurationNotFound("no sample point with negative mass")
            x1 = np.array(scan.entries[scan.most_negative][0])
    x1 = np.asarray(x1, dtype=float)
    g1, e1 = provide(x1)
    m1 = e1.mass
    if m1 >= 0:
        raise ConfigurationNotFound("x1 must have negative mass")
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    # distance from x1 to the boundary along d
    t_hi = optimize.brentq(lambda t: 0.5 - float(domain.contains((x1 + t * d)[None, :])[0]),
                           0.0, 2.0 * domain.max_radius() + 1.0, xtol=1e-14) \
        if not domain.is_unit_ball else float(-x1 @ d + math.sqrt((x1 @ d) ** 2 + 1.0 - x1 @ x1))

    def F(t):
        p = x1 + t * d
        _, ex = provide(p)
        return float(g1(p[None, :])[0]) ** 2 - m1 * ex.mass

    ts = np.linspace(0.02, 0.98, 49) * t_hi
    vals = [F(t) for t in ts]
    k = next((i for i in range(len(ts) - 1) if vals[i] > 0 >= vals[i + 1]), None)
    if k is None:
        raise ConfigurationNotFound("F does not change sign along the ray")
    t_star = optimize.brentq(F, ts[k], ts[k + 1], xtol=xtol, rtol=4 * np.finfo(float).eps)
    x2 = x1 + t_star * d
    g2, e2 = provide(x2)
    lam = (m1 / float(g1(x2[None, :])[0])) ** 2
    d1 = float(domain.distance_to_boundary(x1[None, :])[0])
    d2 = float(domain.distance_to_boundary(x2[None, :])[0])
    delta = 0.1 * min(d1, d2, float(np.linalg.norm(x2 - x1)))
    return TwoBubbleParams(tuple(x1), tuple(x2), lam, eps, g1, g2, e1, e2, delta, h, domain)


class TwoBubbleFamily:
    """Pointwise-evaluable eight-term two-bubble family.

    Terms (``f1 = eps G1``, ``f2 = lambda eps G2``, ``eta_i = eta(|x - x_i|)``)::

        eps^{-1/2} U(f1) + (lambda eps)^{-1/2} U(f2)
        + eta_1 m1 eps^{1/2} V(f1) + eta_2 m2 (lambda eps)^{1/2} V(f2)
        - eta_1 psi(f1) eps^{1/2} (x - x1).((1+f1^2)^{-3/2} grad gamma1(x1) + lambda^{1/2} grad G2(x1))
        - eta_2 psi(f2) (lambda eps)^{1/2} (x - x2).((1+f2^2)^{-3/2} grad gamma2(x2) + lambda^{-1/2} grad G1(x2))
        + eta_1 eps^{3/2} psi(f1) (h(x1) W(f1) - 3/2 m1^2 U(f1)^5)
        + eta_2 (lambda eps)^{3/2} psi(f2) (h(x2) W(f2) - 3/2 m2^2 U(f2)^5)

    ``psi`` uses ``ln(eps^2)`` for both points.
    """

    def __init__(self, params: TwoBubbleParams):
        if params.exp1 is None or params.exp2 is None:
            raise ConstructionError("both Green expansions are required")
        self.params = params
        self.prof = ProfileFunctions(params.eps)
        p = params
        self.gradG2_at_1 = p.green2.gradient(np.array(p.x1)[None, :])[0]
        self.gradG1_at_2 = p.green1.gradient(np.array(p.x2)[None, :])[0]
        self.h1 = float(p.h(np.array(p.x1)[None, :])[0])
        self.h2 = float(p.h(np.array(p.x2)[None, :])[0])

    def _bubble(self, pts, center, gjet, scale, mass, grad_gamma, cross_grad, cross_weight, h_c):
        eps = self.params.eps
        se = scale * eps
        prof = self.prof
        f = gjet * se
        eta = cutoff_jet(pts, center, self.params.delta, 2.0 * self.params.delta)
        main = prof.U_jet(f) * se**-0.5
        corr = prof.V_jet(f) * (mass * se**0.5)
        lin = Jet.linear(pts, center, np.asarray(grad_gamma))
        lin_cross = Jet.linear(pts, center, np.asarray(cross_grad) * cross_weight)
        psi = prof.psi_jet(f)
        tilt = psi * (prof.decay_jet(f) * lin + lin_cross) * se**0.5
        top = psi * (prof.W_jet(f) * h_c - prof.U_jet(f) ** 5 * (1.5 * mass**2)) * se**1.5
        return main, eta * (corr - tilt + top)

    def terms(self, points):
        p = self.params
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lam = p.lam
        m1, m2 = p.exp1.to(SCALED).mass, p.exp2.to(SCALED).mass
        g1, g2 = np.array(p.exp1.to(SCALED).grad_regular), np.array(p.exp2.to(SCALED).grad_regular)
        a1, c1 = self._bubble(pts, np.array(p.x1), p.green1.jet(pts), 1.0, m1, g1, self.gradG2_at_1,
                              math.sqrt(lam), self.h1)
        a2, c2 = self._bubble(pts, np.array(p.x2), p.green2.jet(pts), lam, m2, g2, self.gradG1_at_2,
                              1.0 / math.sqrt(lam), self.h2)
        return a1, a2, c1, c2

    def jet(self, points) -> Jet:
        a1, a2, c1, c2 = self.terms(points)
        return a1 + a2 + c1 + c2

    def __call__(self, points):
        return self.jet(points).val

    at_points = __call__


def two_bubble_family(params: TwoBubbleParams) -> TwoBubbleFamily:
    return TwoBubbleFamily(params)


def stratified_samples(params: TwoBubbleParams, n: int = 100_000, seed: int = 0) -> np.ndarray:
    """40% uniform in the domain, 20% on geometric shells around each point,
    20% in a geometric layer below the boundary."""
    rng = np.random.default_rng(seed)
    dom = params.domain
    R = dom.max_radius()
    n_uni = int(0.4 * n)
    n_pt = int(0.2 * n)
    n_bd = n - n_uni - 2 * n_pt

    def directions(k):
        v = rng.normal(size=(k, 3))
        return v / np.linalg.norm(v, axis=1)[:, None]
    uni = np.empty((0, 3))
    while uni.shape[0] < n_uni:
        c = rng.uniform(-R, R, size=(2 * n_uni, 3))
        uni = np.concatenate([uni, c[dom.contains(c)]])
    parts = [uni[:n_uni]]
    for x in (params.x1, params.x2):
        d_bd = float(dom.distance_to_boundary(np.array(x)[None, :])[0])
        radii = np.exp(rng.uniform(math.log(1e-9), math.log(0.9 * d_bd), n_pt))
        parts.append(np.array(x) + radii[:, None] * directions(n_pt))
    dirs = directions(n_bd)
    rb = dom.boundary_radius(dirs)
    depth = np.exp(rng.uniform(math.log(1e-7), math.log(0.2), n_bd))
    parts.append((rb * (1.0 - depth))[:, None] * dirs)
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# piece identities
# --------------------------------------------------------------------------

def _annulus_sample(center, r_min, r_max, n_r=60, n_dir=24, seed=7):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n_dir, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    r = np.geomspace(r_min, r_max, n_r)
    return np.asarray(center) + (r[:, None, None] * v[None]).reshape(-1, 3)


def verify_piece_identities(params: TwoBubbleParams, eps: float | None = None, r_min: float = 1e-5) -> dict:
    """Evaluate the exact identities for ``U_eps``, ``V_eps`` and the
    asymptotic lines for the pieces of the two-bubble family near ``x1``.

    Exact lines report a relative residual; asymptotic lines report
    ``sup |remainder| / U_eps`` (``/(U_eps + eps U_eps^{-1})`` for the tilt
    piece, whose error term is ``O(eps U^{-1})``) over ``B(x1, 2 delta)``.
    """
    p = params if eps is None else params.with_eps(eps)
    eps = p.eps
    x1 = np.array(p.x1)
    pts = _annulus_sample(x1, r_min, 2.0 * p.delta)
    hv = p.h(pts)
    h0 = float(p.h(x1[None, :])[0])
    e1 = p.exp1.to(SCALED)
    gam, dgam = e1.mass, np.array(e1.grad_regular)
    dG2 = p.green2.gradient(x1[None, :])[0]
    lam = p.lam
    G = p.green1.jet(pts)
    Gv = G.val
    Ginv_sq_grad = G.grad_sq() / Gv**4  # |grad G^{-1}|^2
    prof = ProfileFunctions(eps)
    out = {}

    # exact identities with U_eps = eps^{1/2} G (1+eps^2 G^2)^{-1/2}
    s = G * G * eps**2 + 1.0
    U = G * s ** -0.5 * math.sqrt(eps)
    lhs = U.lap + hv * U.val
    rhs = 3.0 * U.val**5 * Ginv_sq_grad + hv * eps * U.val**3
    out["U_exact"] = float(np.max(np.abs(lhs - rhs) / (np.abs(lhs) + np.abs(rhs) + 1e-300)))
    V = s ** -1.5 * (-gam * math.sqrt(eps))
    sv = s.val
    lhs = V.lap + hv * V.val
    rhs = (15.0 * U.val**4 * V.val + 12.0 * gam * eps**2.5 * Gv**4 * sv**-2.5
           - math.sqrt(eps) * gam * hv * sv**-2.5 * (1.0 + 4.0 * eps**2 * Gv**2)
           - 3.0 * gam * eps**2.5 * Gv**4 * sv**-3.5 * (1.0 - 4.0 * eps**2 * Gv**2) * (Ginv_sq_grad - 1.0))
    scale = np.abs(lhs) + np.abs(rhs) + np.abs(15.0 * U.val**4 * V.val) + 1e-300
    out["V_exact"] = float(np.max(np.abs(lhs - rhs) / scale))

    # asymptotic lines, x^i measured from x1
    z = pts - x1
    Ue = U.val
    Gi = 1.0 / Gv
    xdg = z @ dgam
    f = G * eps
    rem = {}
    rem["U"] = (U.lap + hv * Ue) - (3 * Ue**5 - 12 * gam * Gi * Ue**5 - 18 * Gi * xdg * Ue**5
                                    + 18 * gam**2 * Gi**2 * Ue**5 + h0 * (eps**2 - 8 * Gi**2) * Ue**5)
    Vn = prof.V_jet(f) * math.sqrt(eps)
    rem["V"] = (Vn.lap + hv * Vn.val) - (15 * Ue**4 * Vn.val - 15 * math.sqrt(eps) * Ue**4 + 12 * Gi * Ue**5
                                         + 12 * gam * (5 / eps * Gi**4 * Ue**7 - 4 * Gi**2 * Ue**5))
    Wn = prof.W_jet(f) * eps**1.5
    rem["W"] = (Wn.lap + hv * Wn.val) - (15 * Ue**4 * Wn.val + 8 * eps * Ue**3 - 9 * eps**2 * Ue**5)
    Yn = prof.U_jet(f) ** 5 * (-1.5 * eps**1.5)
    rem["Y"] = (Yn.lap + hv * Yn.val) - (15 * Ue**4 * Yn.val + 30 * eps**3 * Ue**7 - 30 * eps**4 * Ue**9)
    lin = Jet.linear(pts, x1, dgam)
    lin2 = Jet.linear(pts, x1, dG2 * math.sqrt(lam))
    Zn = (s ** -1.5 * lin + lin2) * -math.sqrt(eps)
    rem["Z"] = (Zn.lap + hv * Zn.val) - (15 * Ue**4 * Zn.val + 18 * Ue**5 * Gi * xdg
                                         + 15 * math.sqrt(lam * eps) * Ue**4 * (z @ dG2))
    ratios = {k: float(np.max(np.abs(v) / Ue)) for k, v in rem.items()}
    ratios["Z"] = float(np.max(np.abs(rem["Z"]) / (Ue + eps / Ue)))
    out["remainder_ratio"] = ratios
    # the second bubble near x1 is O(eps^{5/2}) after the exact identity
    Ut = p.green2.jet(pts) * (lam * eps)
    Ut = prof.U_jet(Ut) * (lam * eps) ** -0.5
    out["Utilde_ratio"] = float(np.max(np.abs(Ut.lap + hv * Ut.val)) / eps**2.5)
    phi = prof.psi_jet(f)
    out["phi_ratio"] = float(np.max(np.abs(phi.lap) / (Ue**2 / (eps * math.log(1 / eps)))))
    out["eps"] = eps
    return out


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

@dataclass
class ResidualSweep:
    mode: str
    eps: list
    l3_norms: list
    linf_norms: list
    min_u: list
    positivity_ok: list
    balance_residuals: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("eps values must be strictly decreasing")

    def rows(self):
        for k, e in enumerate(self.eps):
            br = self.balance_residuals[k] if self.balance_residuals else (float("nan"), float("nan"))
            yield [e, self.l3_norms[k], self.linf_norms[k], self.min_u[k], br[0], br[1]]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["eps", "l3_norm", "linf_norm", "min_u", "balance_residual_1", "balance_residual_2"])
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])
        return path

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def instability_sweep(mode: str, h: CoefficientH, eps_list, domain: Domain | None = None,
                      n_samples: int = 100_000, seed: int = 0, params: TwoBubbleParams | None = None,
                      grid: RadialGrid | None = None) -> ResidualSweep:
    """Build the family at each ``eps`` and record the norms of ``h~ - h``.

    ``radial``: L^3 norm by Simpson on a radial grid (sup over its nodes as
    the L-infinity column).  ``two_bubble``: sampled sup over a stratified
    cloud; the L^3 column is the Monte Carlo estimate from its uniform part.
    """
    eps_list = [float(e) for e in eps_list]
    mode = mode.replace("-", "_")
    if mode == "radial":
        base = RadialFamilyParams.build(h, eps_list[0])
        l3, linf, mins = [], [], []
        for e in eps_list:
            res = radial_residual(base.with_eps(e), grid)
            l3.append(res.l3_norm)
            linf.append(res.linf_norm)
            mins.append(res.min_u)
        return ResidualSweep("radial", eps_list, l3, linf, mins, [m > 0 for m in mins], [],
                             {"h": h.describe(), "mass": base.mass, "cutoff": list(base.cutoff)})
    if mode != "two_bubble":
        raise ValueError(f"unknown sweep mode {mode!r}")
    domain = domain or Domain.unit_ball()
    params = params or balance_configuration(h, domain, eps_list[0])
    pts = stratified_samples(params, n_samples, seed)
    n_uni = int(0.4 * n_samples)
    vol = 4.0 * math.pi / 3.0 if domain.is_unit_ball else float("nan")
    l3, linf, mins, bal = [], [], [], []
    for e in eps_list:
        p = params.with_eps(e)
        jet = TwoBubbleFamily(p).jet(pts)
        res = residual_potential(jet, h, pts)
        mc = vol * float(np.mean(np.abs(res.deviation[:n_uni]) ** 3))
        l3.append(mc ** (1.0 / 3.0))
        linf.append(res.linf_norm)
        mins.append(res.min_u)
        bal.append(tuple(float(b) for b in p.balance_residuals()))
    return ResidualSweep("two_bubble", eps_list, l3, linf, mins, [m > 0 for m in mins], bal,
                         {**params.describe(), "n_samples": n_samples, "seed": seed})
