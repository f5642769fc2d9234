"""The standard bubble, spherical-average profiles and greedy extraction of
concentration points."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import ScalarField3D
from .geometry import DEFAULT_RULE, Domain, GeometryError, SphereRule, evaluate_at, sphere_average
from .jets import Jet


@dataclass(frozen=True)
class BubbleConfiguration:
    points: tuple
    weights: tuple
    eps: float | None = None

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        wts = tuple(float(w) for w in self.weights)
        if len(pts) != len(wts) or not pts:
            raise ValueError("need one positive weight per point")
        if any(w <= 0 for w in wts):
            raise ValueError("weights must be positive")
        if len(set(pts)) != len(pts):
            raise ValueError("points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.points)

    def __len__(self):
        return len(self.points)


# --------------------------------------------------------------------------
# the bubble
# --------------------------------------------------------------------------

def standard_bubble(x, center=(0.0, 0.0, 0.0), mu: float = 1.0):
    """``mu^{-1/2} (1 + |x - c|^2 / (3 mu^2))^{-1/2}``, an entire solution of ``Delta U = U^5``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    x = np.asarray(x, dtype=float)
    z = x - np.asarray(center, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    return mu**-0.5 / np.sqrt(1.0 + r2 / (3.0 * mu * mu))


def bubble_jet(points, center=(0.0, 0.0, 0.0), mu: float = 1.0) -> Jet:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    z = points - np.asarray(center, dtype=float)
    c = 1.0 / (3.0 * mu * mu)
    q = Jet(1.0 + c * np.einsum("ij,ij->i", z, z), 2.0 * c * z, np.full(z.shape[0], -6.0 * c))
    v = q.val
    return q.apply(mu**-0.5 * v**-0.5, -0.5 * mu**-0.5 * v**-1.5, 0.75 * mu**-0.5 * v**-2.5)


def bubble_profile_psi(r):
    """Closed form of the spherical profile of the unit bubble, ``(r/(1+r^2/3))^{1/2}``."""
    r = np.asarray(r, dtype=float)
    return np.sqrt(r / (1.0 + r * r / 3.0))


# --------------------------------------------------------------------------
# spherical profile and critical radius
# --------------------------------------------------------------------------

def spherical_profile(u, center, radii, domain: Domain | None = None, rule: SphereRule = DEFAULT_RULE):
    """``[(r, r^{1/2} * mean of u over the sphere of radius r)]``."""
    out = []
    for r in np.asarray(radii, dtype=float):
        out.append((float(r), float(math.sqrt(r) * sphere_average(u, center, float(r), domain, rule))))
    return out


def critical_radius(profile, inner_cutoff: float) -> float:
    """Largest sampled ``r`` such that the discrete ``psi'`` is non-positive on
    ``[inner_cutoff, r]``; the outer end of the profile if it never turns up."""
    prof = np.asarray(profile, dtype=float)
    if prof.ndim != 2 or prof.shape[0] < 3:
        raise ValueError("profile needs at least 3 samples")
    keep = prof[:, 0] >= inner_cutoff
    r, psi = prof[keep, 0], prof[keep, 1]
    if r.size < 3:
        raise ValueError("fewer than 3 samples beyond the inner cutoff")
    if np.any(np.diff(r) <= 0):
        raise ValueError("profile radii must increase")
    rising = np.flatnonzero(np.diff(psi) > 0)
    if rising.size == 0:
        return float(r[-1])
    return float(r[rising[0]])


# --------------------------------------------------------------------------
# extraction of concentration points
# --------------------------------------------------------------------------

@dataclass
class ExtractionResult:
    points: list
    heights: list
    threshold: float = 1.0
    covering_margin: float = float("nan")
    indices: list = field(default_factory=list, repr=False)

    def __bool__(self):
        return bool(self.points)

    def boundary_products(self, domain: Domain) -> np.ndarray:
        p = np.array(self.points)
        return domain.distance_to_boundary(p) * np.array(self.heights) ** 2

    def separation_ok(self, domain: Domain) -> bool:
        """Both invariants: ``d(x_i, bd) u(x_i)^2 >= t`` and ``|x_i - x_j| u(x_i)^2 >= t``."""
        if not self.points:
            return True
        if np.any(self.boundary_products(domain) < self.threshold):
            return False
        p = np.array(self.points)
        u2 = np.array(self.heights) ** 2
        for i in range(len(p)):
            for j in range(len(p)):
                if i != j and np.linalg.norm(p[i] - p[j]) * u2[i] < self.threshold:
                    return False
        return True

    def to_json(self) -> str:
        return json.dumps({"points": [list(map(float, p)) for p in self.points],
                           "heights": [float(v) for v in self.heights],
                           "threshold": self.threshold, "covering_margin": self.covering_margin})


class EmptyResult(ExtractionResult):
    """No candidate satisfies ``d(x, bd) u(x)^2 >= threshold``."""

    def __init__(self, threshold: float = 1.0, covering_margin: float = float("nan")):
        super().__init__([], [], threshold, covering_margin)


def _strict_local_maxima(v, valid):
    """Strict maxima over the 26-neighbourhood among ``valid`` nodes."""
    pad = np.pad(v, 1, mode="constant", constant_values=-np.inf)
    core = pad[1:-1, 1:-1, 1:-1]
    is_max = valid.copy()
    n = v.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if di == dj == dk == 0:
                    continue
                nb = pad[1 + di:1 + di + n[0], 1 + dj:1 + dj + n[1], 1 + dk:1 + dk + n[2]]
                is_max &= core > nb
    return is_max


def extract_concentration_points(u: ScalarField3D, domain: Domain | None = None,
                                 threshold: float = 1.0) -> ExtractionResult:
    """Greedy selection of concentration points.

    ``K_0`` holds the strict 26-neighbour maxima away from a two-cell boundary
    layer with ``d(x, bd) u(x)^2 >= threshold``.  Each step picks the argmax
    of ``u`` over ``K_p`` (ties: lexicographic grid index) and keeps the
    candidates ``x`` with ``|x_{p+1} - x| u(x_{p+1})^2 >= threshold`` and
    ``min_i |x - x_i| u(x)^2 >= threshold``.
    """
    g = u.grid
    domain = domain or g.domain
    v = u.values
    inner = g.interior.copy()
    for ax in range(3):
        for s in (1, 2):
            inner &= np.roll(g.interior, s, axis=ax) & np.roll(g.interior, -s, axis=ax)
    cand = _strict_local_maxima(np.where(g.interior, v, -np.inf), inner)
    idx = np.argwhere(cand)  # argwhere is lexicographic
    pts = g.points[cand]
    vals = v[cand]
    d = domain.distance_to_boundary(pts) if len(pts) else np.zeros(0)
    keep = d * vals**2 >= threshold
    idx, pts, vals = idx[keep], pts[keep], vals[keep]
    all_pts = g.points[g.interior]
    all_vals = v[g.interior]
    if len(pts) == 0:
        return EmptyResult(threshold)
    chosen = []
    alive = np.ones(len(pts), dtype=bool)
    while alive.any():
        live = np.flatnonzero(alive)
        top = vals[live].max()
        k = live[vals[live] == top][0]  # first in lexicographic order
        chosen.append(k)
        far_from_new = np.linalg.norm(pts[k] - pts, axis=1) * vals[k] ** 2 >= threshold
        sel = np.array(chosen)
        dmin = np.min(np.linalg.norm(pts[:, None, :] - pts[None, sel, :], axis=2), axis=1)
        alive &= far_from_new & (dmin * vals**2 >= threshold)
    sel = np.array(chosen)
    chosen_pts = pts[sel]
    margin = 0.0
    for k in range(0, all_pts.shape[0], 65536):
        block = all_pts[k:k + 65536]
        dmin = np.min(np.linalg.norm(block[:, None, :] - chosen_pts[None, :, :], axis=2), axis=1)
        margin = max(margin, float(np.max(dmin * all_vals[k:k + 65536] ** 2)))
    return ExtractionResult([tuple(map(float, p)) for p in chosen_pts], [float(vals[s]) for s in sel],
                            threshold, margin, [tuple(int(c) for c in idx[s]) for s in sel])


def rescale_and_compare(u, point, mu: float | None = None, R: float = 5.0, domain: Domain | None = None,
                        n_radial: int = 40, rule: SphereRule = SphereRule(8, 16)) -> float:
    """``sup_{|x| <= R} |mu^{1/2} u(p + mu x) - (1 + |x|^2/3)^{-1/2}|`` on a
    polar sample; ``mu`` defaults to ``u(p)^{-2}``."""
    p = np.asarray(point, dtype=float)
    if mu is None:
        mu = float(evaluate_at(u, p[None, :])[0]) ** -2
    domain = domain or getattr(getattr(u, "grid", None), "domain", None)
    if domain is not None and domain.distance_to_boundary(p[None, :])[0] <= R * mu:
        raise GeometryError("comparison ball leaves the domain")
    r = np.linspace(0.0, R, n_radial + 1)
    x = np.concatenate([[np.zeros(3)], (r[1:, None, None] * rule.directions[None]).reshape(-1, 3)])
    vals = math.sqrt(mu) * evaluate_at(u, p + mu * x)
    return float(np.max(np.abs(vals - standard_bubble(x))))
