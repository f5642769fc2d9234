"""Structural condition, the Pohozaev identities for ``Delta u + h u = u^5``
and the Pohozaev sum for superposed Green functions.

Identities are evaluated in the forms obtained by multiplying the equation
by ``<x, grad u> + u/2`` and by ``grad u`` and integrating by parts:

    P1  1/2 int (h u^2 + h <x, grad u^2>) = B1 + B2
    P2  1/2 int h (u^2 + <x, grad u^2>)   =  1/2 int_bd <x,nu> (d_nu u)^2   (u = 0 on bd)
    P3  int (h + <x, grad h>/2) u^2       = -1/2 int_bd <x,nu> (d_nu u)^2   (u = 0 on bd)
    P4  int_bd (|grad u|^2/2 nu - d_nu u grad u - u^6/6 nu) = -int h grad(u^2)/2

``form="alternate"`` selects the variants without the factor 1/2 on the
boundary side of P2/P3 and with the opposite signs of ``u^6/6`` and of the
right-hand side in P4.  They are kept for comparison; they do not hold.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bubbles import BubbleConfiguration
from .fields import CoefficientH, ScalarField3D, ScalarFieldRadial
from .geometry import DEFAULT_RULE, Domain, SphereRule, surface_integral, volume_integral
from .green import SCALED, UNIT, GreenExpansion, GreenField, NormalizationError
from .jets import Jet

RESIDUAL_FLOOR = 1e-12
FORMS = ("corrected", "alternate")


class PreconditionError(ValueError):
    pass


def relative_residual(lhs, rhs, floor: float = RESIDUAL_FLOOR) -> float:
    lhs, rhs = np.atleast_1d(lhs), np.atleast_1d(rhs)
    return float(np.max(np.abs(lhs - rhs) / (np.abs(lhs) + np.abs(rhs) + floor)))


@dataclass
class PohozaevReport:
    identity_id: str
    lhs: object
    rhs: object
    volume_term: object
    boundary_B1: float = 0.0
    boundary_B2: float = 0.0
    identity_residual: float = 0.0
    form: str = "corrected"
    extras: dict = field(default_factory=dict)

    def csv_rows(self):
        lhs, rhs = np.atleast_1d(self.lhs), np.atleast_1d(self.rhs)
        if lhs.size == 1:
            return [(self.identity_id, float(lhs[0]), float(rhs[0]), self.identity_residual)]
        return [(f"{self.identity_id}[{k}]", float(a), float(b), relative_residual(a, b))
                for k, (a, b) in enumerate(zip(lhs, rhs))]


def write_reports_csv(reports, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["identity_id", "lhs", "rhs", "residual"])
        for rep in reports:
            for row in rep.csv_rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    return path


# --------------------------------------------------------------------------
# structural condition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StructuralCertificate:
    min_value: float
    satisfied: bool
    tolerance: float
    gradient: str  # "analytic" or "finite-difference"
    argmin: tuple = ()


def check_structural_condition(h: CoefficientH, domain: Domain, n_radial: int = 201,
                               rule: SphereRule = SphereRule(16, 32), tol: float = 1e-12) -> StructuralCertificate:
    """Sampled minimum of ``h + <x, grad h>/2`` over the closed domain."""
    t = np.linspace(0.0, 1.0, n_radial)
    if h.is_radial and domain.is_unit_ball:
        pts = np.zeros((n_radial, 3))
        pts[:, 0] = t
    else:
        R = domain.boundary_radius(rule.directions)
        pts = (t[:, None, None] * (R[:, None] * rule.directions)[None]).reshape(-1, 3)
    vals = h(pts) + 0.5 * h.x_dot_grad(pts)
    k = int(np.argmin(vals))
    return StructuralCertificate(float(vals[k]), bool(vals[k] >= -tol), tol,
                                 "analytic" if h.has_analytic_gradient or h.kind == "radial_table"
                                 else "finite-difference", tuple(float(c) for c in pts[k]))


# --------------------------------------------------------------------------
# field access
# --------------------------------------------------------------------------

def _sampler(u):
    """points -> (u, grad u) for jets, Cartesian fields and plain callables."""
    if isinstance(u, ScalarField3D):
        return lambda p: (u.at_points(p), u.gradient_at(p))

    def sample(p):
        out = u(p)
        if isinstance(out, Jet):
            return out.val, out.grad
        raise TypeError("callables passed to the identities must return Jets")
    return sample


def _radial_parts(u: ScalarFieldRadial, h: CoefficientH):
    r = u.grid.nodes
    du = u.derivative()
    R = u.grid.R
    return r, u.values, du, h.radial(r), R, float(u.values[-1]), float(du[-1])


def _boundary_trace(u, domain: Domain, rule: SphereRule):
    if isinstance(u, ScalarFieldRadial):
        return abs(float(u.values[-1])), float(np.max(np.abs(u.values)))
    pts, _, _ = domain.boundary_quadrature(rule)
    val, _ = _sampler(u)(pts)
    return float(np.max(np.abs(val))), float("nan")


def _check_form(form):
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")


def _check_radial(u, domain: Domain):
    if isinstance(u, ScalarFieldRadial) and not domain.is_unit_ball:
        raise PreconditionError("radial fields are only evaluated on the unit ball")


# --------------------------------------------------------------------------
# identities
# --------------------------------------------------------------------------

def evaluate_identity_P1(u, h: CoefficientH, domain: Domain | None = None, boundary_vanishing: bool = False,
                         form: str = "corrected", rule: SphereRule = DEFAULT_RULE, n_radial: int = 64,
                         trace_tol: float = 1e-6) -> PohozaevReport:
    """P1 (``boundary_vanishing=False``) or its reduction P2 for ``u = 0`` on the boundary."""
    _check_form(form)
    domain = domain or Domain.unit_ball()
    _check_radial(u, domain)
    if boundary_vanishing:
        _require_vanishing(u, domain, rule, trace_tol)
    if isinstance(u, ScalarFieldRadial):
        r, v, dv, hv, R, vb, dvb = _radial_parts(u, h)
        w = u.grid.simpson_weights()
        lhs = 0.5 * float(np.dot(w, hv * (v * v + 2.0 * r * v * dv)))
        area = 4.0 * math.pi * R * R
        b1 = area * (R * dvb * dvb + 0.5 * vb * dvb - R * dvb * dvb / 2.0)
        b2 = area * R * vb**6 / 6.0
        bnd = area * R * dvb * dvb
    else:
        sample = _sampler(u)

        def integrand(p):
            val, grad = sample(p)
            hv = h(p)
            return 0.5 * (hv * val * val + hv * 2.0 * val * np.einsum("ij,ij->i", p, grad))
        lhs = volume_integral(integrand, domain, n_radial=n_radial, rule=rule)

        def b1_density(p, nu):
            val, grad = sample(p)
            dn = np.einsum("ij,ij->i", grad, nu)
            xn = np.einsum("ij,ij->i", p, nu)
            return np.einsum("ij,ij->i", p, grad) * dn + 0.5 * val * dn - xn * np.einsum("ij,ij->i", grad, grad) / 2
        b1 = float(surface_integral(b1_density, domain, rule))
        b2 = float(surface_integral(lambda p, nu: np.einsum("ij,ij->i", p, nu) * sample(p)[0] ** 6 / 6.0,
                                    domain, rule))
        bnd = float(surface_integral(
            lambda p, nu: np.einsum("ij,ij->i", p, nu) * np.einsum("ij,ij->i", sample(p)[1], nu) ** 2,
            domain, rule))
    if boundary_vanishing:
        rhs = bnd if form == "alternate" else 0.5 * bnd
        ident = "P2"
    else:
        rhs = b1 + b2
        ident = "P1"
    return PohozaevReport(ident, lhs, rhs, lhs, b1, b2, relative_residual(lhs, rhs), form)


def evaluate_identity_P2(u, h, domain=None, **kw) -> PohozaevReport:
    return evaluate_identity_P1(u, h, domain, boundary_vanishing=True, **kw)


def _require_vanishing(u, domain, rule, tol):
    trace, scale = _boundary_trace(u, domain, rule)
    ref = scale if np.isfinite(scale) and scale > 0 else 1.0
    if trace > tol * max(1.0, ref):
        raise PreconditionError(f"boundary trace {trace:.3g} exceeds tolerance")


def evaluate_identity_P3(u, h: CoefficientH, domain: Domain | None = None, form: str = "corrected",
                         rule: SphereRule = DEFAULT_RULE, n_radial: int = 64,
                         trace_tol: float = 1e-6) -> PohozaevReport:
    """P3 for ``u`` vanishing on the boundary, with the obstruction verdict.

    When the domain is star-shaped and ``h`` satisfies the structural
    condition the left side is ``>= 0`` and the right side ``<= 0``; the
    report then carries ``contradiction_margin = lhs - rhs``, which is
    positive for any non-zero ``u``.
    """
    _check_form(form)
    domain = domain or Domain.unit_ball()
    _check_radial(u, domain)
    _require_vanishing(u, domain, rule, trace_tol)
    if isinstance(u, ScalarFieldRadial):
        r, v, dv, hv, R, vb, dvb = _radial_parts(u, h)
        coef = hv + 0.5 * r * h.radial_derivative(r)
        lhs = float(np.dot(u.grid.simpson_weights(), coef * v * v))
        flux = 4.0 * math.pi * R * R * R * dvb * dvb
    else:
        sample = _sampler(u)
        lhs = volume_integral(lambda p: (h(p) + 0.5 * h.x_dot_grad(p)) * sample(p)[0] ** 2, domain,
                              n_radial=n_radial, rule=rule)
        flux = float(surface_integral(
            lambda p, nu: np.einsum("ij,ij->i", p, nu) * np.einsum("ij,ij->i", sample(p)[1], nu) ** 2,
            domain, rule))
    rhs = -flux if form == "alternate" else -0.5 * flux
    cert = check_structural_condition(h, domain)
    star_ok, _ = (True, 1.0) if domain.is_unit_ball else domain.star_certificate()
    extras = {"boundary_flux": flux, "structural_condition": cert.satisfied, "star_shaped": star_ok}
    if cert.satisfied and star_ok:
        extras["verdict"] = "obstructed: lhs >= 0 >= rhs, only u = 0 balances"
        extras["contradiction_margin"] = lhs - rhs
    else:
        extras["verdict"] = "not obstructed"
    return PohozaevReport("P3", lhs, rhs, lhs, 0.0, 0.0, relative_residual(lhs, rhs), form, extras)


def evaluate_identity_P4(u, h: CoefficientH, domain: Domain | None = None, form: str = "corrected",
                         rule: SphereRule = DEFAULT_RULE, n_radial: int = 64) -> PohozaevReport:
    """Translation identity (3-vector); residual is the worst component."""
    _check_form(form)
    domain = domain or Domain.unit_ball()
    _check_radial(u, domain)
    if isinstance(u, ScalarFieldRadial):
        zero = np.zeros(3)
        return PohozaevReport("P4", zero, zero.copy(), zero.copy(), 0.0, 0.0, 0.0, form,
                              {"note": "radial field on a ball: both sides vanish by symmetry"})
    sample = _sampler(u)
    sgn6 = 1.0 if form == "alternate" else -1.0

    def density(p, nu):
        val, grad = sample(p)
        dn = np.einsum("ij,ij->i", grad, nu)
        g2 = np.einsum("ij,ij->i", grad, grad)
        return (g2 / 2.0 + sgn6 * val**6 / 6.0)[:, None] * nu - dn[:, None] * grad
    lhs = np.asarray(surface_integral(density, domain, rule), dtype=float)
    vol = np.array([volume_integral(lambda p, k=k: h(p) * sample(p)[0] * sample(p)[1][:, k], domain,
                                    n_radial=n_radial, rule=rule) for k in range(3)])
    rhs = vol if form == "alternate" else -vol
    return PohozaevReport("P4", lhs, rhs, vol, 0.0, 0.0, relative_residual(lhs, rhs), form)


# --------------------------------------------------------------------------
# Green functions
# --------------------------------------------------------------------------

def superposed_expansion(config: BubbleConfiguration, expansions, fields=None):
    """Mass ``m_i`` and regular gradient of ``G = sum_j lambda_j G(x_j, .)`` at
    each ``x_i``: the own term ``lambda_i`` times the single expansion plus the
    smooth contributions ``lambda_j G(x_j, x_i)`` of the other poles."""
    norms = {e.normalization for e in expansions}
    if len(norms) != 1:
        raise NormalizationError(f"mixed normalizations {sorted(norms)}")
    norm = norms.pop()
    if len(expansions) != len(config):
        raise ValueError("one expansion per configuration point")
    pts = config.array
    lam = np.array(config.weights)
    n = len(config)
    if n > 1 and (fields is None or len(fields) != n):
        raise ValueError("cross terms need the Green field of every point")
    masses, grads = np.zeros(n), np.zeros((n, 3))
    for i, ex in enumerate(expansions):
        if np.linalg.norm(np.array(ex.source) - pts[i]) > 1e-12:
            raise ValueError("expansion source does not match the configuration point")
        masses[i] = lam[i] * ex.mass
        grads[i] = lam[i] * np.array(ex.grad_regular)
        for j in range(n):
            if j == i:
                continue
            gf = fields[j] if fields[j].normalization == norm else fields[j].renormalized(norm)
            masses[i] += lam[j] * float(gf(pts[i][None, :])[0])
            grads[i] += lam[j] * gf.gradient(pts[i][None, :])[0]
    return masses, grads, norm


def green_pohozaev_sum(config: BubbleConfiguration, expansions, fields=None) -> float:
    """``sum_i lambda_i (m_i + 2 <x_i, grad gamma_i(x_i)>)`` for the superposed
    Green function, in the (common) normalization of ``expansions``.

    ``fields`` holds the Green field of each point and is needed for the cross
    terms when there is more than one point.
    """
    m, g, _ = superposed_expansion(config, expansions, fields)
    lam = np.array(config.weights)
    return float(np.sum(lam * (m + 2.0 * np.einsum("ij,ij->i", config.array, g))))


def green_boundary_flux(config: BubbleConfiguration, fields, domain: Domain,
                        rule: SphereRule = SphereRule(48, 96)) -> float:
    """``-int_bd <x, nu> |grad G|^2`` for ``G = sum lambda_j G(x_j, .)``.

    For ``h = 0`` this equals :func:`green_pohozaev_sum` in the unit
    normalization and ``OMEGA_2`` times it in the scaled one; in general the sum
    also carries ``-2 int (h + <x, grad h>/2) G^2``.
    """
    lam = np.array(config.weights)

    def dens(p, nu):
        grad = sum(l * f.gradient(p) for l, f in zip(lam, fields))
        return np.einsum("ij,ij->i", p, nu) * np.einsum("ij,ij->i", grad, grad)
    return -float(surface_integral(dens, domain, rule))


__all__ = ["PohozaevReport", "StructuralCertificate", "check_structural_condition", "evaluate_identity_P1",
           "evaluate_identity_P2", "evaluate_identity_P3", "evaluate_identity_P4", "green_pohozaev_sum",
           "superposed_expansion", "green_boundary_flux", "write_reports_csv", "relative_residual",
           "SCALED", "UNIT", "GreenExpansion", "GreenField"]
