"""Discretisations of ``Delta + h`` (analyst sign), Dirichlet solves,
coercivity tests and the radial shooting solver for ``Delta u + h u = u^5``.

Sign convention: ``Delta u = -sum_i d_i d_i u`` everywhere, so the discrete
operator is the negated 7-point stencil and ``Delta |x|^2 = -6``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, optimize, sparse
from scipy.sparse import linalg as splinalg

from .fields import CoefficientH, ScalarField3D, ScalarFieldRadial
from .geometry import Domain, Grid3D, RadialGrid, volume_integral
from .jets import Jet

log = logging.getLogger(__name__)

# sharp constant S of  S ||u||_6^2 <= ||grad u||_2^2  in R^3
SOBOLEV_CONSTANT = 3.0 * (math.pi / 2.0) ** (4.0 / 3.0)


class SolverError(RuntimeError):
    pass


class IndefiniteSystemError(SolverError):
    """``Delta + h`` is not coercive on the domain."""


class IterationLimitError(SolverError):
    pass


# --------------------------------------------------------------------------
# Laplacians
# --------------------------------------------------------------------------

def _second_derivative(x, y):
    d = np.empty_like(y)
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    d[1:-1] = 2.0 * (y[:-2] / (h0 * (h0 + h1)) - y[1:-1] / (h0 * h1) + y[2:] / (h1 * (h0 + h1)))
    d[0] = _quad_second(x[:3], y[:3])
    d[-1] = _quad_second(x[-3:], y[-3:])
    return d


def _quad_second(x3, y3):
    a, b, c = x3
    return 2.0 * (y3[0] / ((a - b) * (a - c)) + y3[1] / ((b - a) * (b - c)) + y3[2] / ((c - a) * (c - b)))


def apply_laplacian(fld, points=None):
    """Analyst Laplacian of a sampled field, or of a jet-valued callable at ``points``."""
    if isinstance(fld, ScalarFieldRadial):
        x, y = fld.grid.nodes, fld.values
        d1 = fld.derivative()
        d2 = _second_derivative(x, y)
        if fld.grid.reaches_origin:
            # even ghost value u(-r1) = u(r1)
            d2[0] = _quad_second(np.array([-x[0], x[0], x[1]]), np.array([y[0], y[0], y[1]]))
        return fld.with_values(-(d2 + 2.0 * d1 / x))
    if isinstance(fld, ScalarField3D):
        g = fld.grid
        v = fld.values
        out = np.zeros_like(v)
        core = (slice(1, -1),) * 3
        lap = 6.0 * v[core]
        for ax in range(3):
            lo = [slice(1, -1)] * 3
            hi = [slice(1, -1)] * 3
            lo[ax] = slice(0, -2)
            hi[ax] = slice(2, None)
            lap -= v[tuple(lo)] + v[tuple(hi)]
        out[core] = lap / g.spacing**2
        out[~g.interior] = 0.0
        return ScalarField3D(g, out)
    if points is None:
        raise TypeError("analytic Laplacian needs evaluation points")
    jet = fld(np.atleast_2d(points))
    if not isinstance(jet, Jet):
        raise TypeError("callable must return a Jet for the analytic path")
    return jet.lap


def lattice_residual_sup(func, spacing: float, radius: float, residual, center=(0.0, 0.0, 0.0)) -> float:
    """sup over lattice nodes in ``B(center, radius)`` of
    ``|residual(x, u, L_h u)|`` with ``L_h`` the negated 7-point stencil.

    Streams z-slabs so large lattices never sit in memory at once.
    """
    center = np.asarray(center, dtype=float)
    n = int(math.floor(radius / spacing))
    ax = spacing * np.arange(-n - 1, n + 2)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    plane = lambda z: func(np.stack([X.ravel(), Y.ravel(), np.full(X.size, z)], axis=-1) + center).reshape(X.shape)
    worst = 0.0
    prev, cur = plane(ax[0]), plane(ax[1])
    for k in range(1, ax.size - 1):
        nxt = plane(ax[k + 1])
        lap = (6.0 * cur[1:-1, 1:-1] - cur[:-2, 1:-1] - cur[2:, 1:-1] - cur[1:-1, :-2]
               - cur[1:-1, 2:] - prev[1:-1, 1:-1] - nxt[1:-1, 1:-1]) / spacing**2
        xi, yi = X[1:-1, 1:-1], Y[1:-1, 1:-1]
        inside = xi**2 + yi**2 + ax[k] ** 2 <= radius**2
        if inside.any():
            pts = np.stack([xi[inside], yi[inside], np.full(inside.sum(), ax[k])], axis=-1) + center
            worst = max(worst, float(np.max(np.abs(residual(pts, cur[1:-1, 1:-1][inside], lap[inside])))))
        prev, cur = cur, nxt
    return worst


# --------------------------------------------------------------------------
# radial linear problems
# --------------------------------------------------------------------------

def _radial_system(grid: RadialGrid, hvals):
    """Tridiagonal matrix of ``-w'' + h w`` on the unknown nodes, with
    ``w = r v`` vanishing at the origin (or inner radius) and at ``R``."""
    x = grid.nodes
    if grid.reaches_origin:
        xs = np.concatenate([[0.0], x])
        hv = np.concatenate([[hvals[0]], hvals])
    else:
        xs, hv = x, hvals
    h0 = xs[1:-1] - xs[:-2]
    h1 = xs[2:] - xs[1:-1]
    lower = -2.0 / (h0 * (h0 + h1))
    diag = 2.0 / (h0 * h1) + hv[1:-1]
    upper = -2.0 / (h1 * (h0 + h1))
    return xs, lower, diag, upper


def _radial_smallest_eigenvalue(grid: RadialGrid, hvals) -> float:
    _, lower, diag, upper = _radial_system(grid, hvals)
    off = np.sqrt(upper[:-1] * lower[1:])
    return float(linalg.eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(0, 0))[0])


def _solve_radial(h: CoefficientH, rhs: ScalarFieldRadial) -> ScalarFieldRadial:
    grid = rhs.grid
    hvals = h.radial(grid.nodes)
    if _radial_smallest_eigenvalue(grid, hvals) <= 0:
        raise IndefiniteSystemError("Delta + h is not coercive on the ball")
    xs, lower, diag, upper = _radial_system(grid, hvals)
    interior = xs[1:-1]
    f = rhs(interior) * interior
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    w = linalg.solve_banded((1, 1), ab, f)
    v = np.zeros(grid.nodes.size)
    if grid.reaches_origin:
        v[:-1] = w / interior
    else:
        v[1:-1] = w / interior
    return rhs.with_values(v)


# --------------------------------------------------------------------------
# Cartesian linear problems
# --------------------------------------------------------------------------

class DirichletProblem3D:
    """Sparse ``Delta + h`` on the interior nodes of a :class:`Grid3D`.

    ``boundary = "linear"`` (default) places the Dirichlet value where each
    grid line crosses the boundary and eliminates the exterior neighbour by
    linear extrapolation.  Only the diagonal changes, so the matrix stays
    symmetric positive definite for a coercive operator and the solution is
    second-order accurate.  ``boundary = "snap"`` treats exterior neighbours
    as lying on the boundary (first order).
    """

    THETA_MIN = 1e-3

    def __init__(self, grid: Grid3D, h: CoefficientH, boundary: str = "linear"):
        if boundary not in ("linear", "snap"):
            raise ValueError(f"unknown boundary treatment {boundary!r}")
        self.grid = grid
        self.h = h
        self.boundary = boundary
        inside = grid.interior
        self.index = -np.ones(grid.shape, dtype=np.int64)
        self.index[inside] = np.arange(grid.n_interior)
        self.hvals = h(grid.points[inside])
        inv_h2 = 1.0 / grid.spacing**2
        rows, cols = [], []
        bd_rows, bd_nodes, bd_dirs = [], [], []
        flat_index = self.index.ravel()
        interior_flat = np.flatnonzero(inside.ravel())
        strides = np.array([grid.shape[1] * grid.shape[2], grid.shape[2], 1])
        for ax in range(3):
            for sgn in (-1, 1):
                nb = interior_flat + sgn * strides[ax]
                j = flat_index[nb]
                ok = j >= 0
                rows.append(flat_index[interior_flat[ok]])
                cols.append(j[ok])
                bd_rows.append(flat_index[interior_flat[~ok]])
                bd_nodes.append(nb[~ok])
                d = np.zeros(3)
                d[ax] = sgn
                bd_dirs.append(np.broadcast_to(d, (int((~ok).sum()), 3)))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        self.bd_rows = np.concatenate(bd_rows)
        self.bd_nodes = np.concatenate(bd_nodes)
        dirs = np.concatenate(bd_dirs)
        origin_pts = grid.points.reshape(-1, 3)[interior_flat][self.bd_rows]
        if boundary == "linear":
            self.theta = np.clip(_crossing_fraction(grid.domain, origin_pts, dirs, grid.spacing), self.THETA_MIN, 1.0)
        else:
            self.theta = np.ones(self.bd_rows.size)
        self.crossings = origin_pts + (self.theta * grid.spacing)[:, None] * dirs
        n = grid.n_interior
        diag = 6.0 * inv_h2 + self.hvals
        np.add.at(diag, self.bd_rows, (1.0 / self.theta - 1.0) * inv_h2)
        off = sparse.csr_matrix((np.full(rows.size, -inv_h2), (rows, cols)), shape=(n, n))
        self.matrix = (off + sparse.diags(diag)).tocsr()
        self._lu = None

    def _crossing_values(self, boundary_values) -> np.ndarray:
        if callable(boundary_values):
            return np.asarray(boundary_values(self.crossings), dtype=float)
        return np.asarray(boundary_values, dtype=float).ravel()[self.bd_nodes]

    def lift(self, boundary_values) -> np.ndarray:
        """Right-hand-side contribution of the Dirichlet values: a callable
        evaluated at the boundary crossings, or an array on the grid nodes
        whose exterior entries are used at the crossings."""
        ub = self._crossing_values(boundary_values)
        out = np.zeros(self.grid.n_interior)
        np.add.at(out, self.bd_rows, ub / (self.theta * self.grid.spacing**2))
        return out

    def smallest_eigenvalue(self, tol: float = 1e-7) -> float:
        """Lowest eigenvalue by LOBPCG (Jacobi preconditioned), started from
        the distance to the boundary; shift-invert ARPACK as a fallback."""
        A = self.matrix
        pts = self.grid.points[self.grid.interior]
        x0 = np.maximum(self.grid.domain.distance_to_boundary(pts), 1e-3)[:, None]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            vals, vec = splinalg.lobpcg(A, x0, M=sparse.diags(1.0 / A.diagonal()), largest=False,
                                      tol=tol, maxiter=3000)
        lam = float(vals[0])
        if np.linalg.norm(A @ vec[:, 0] - lam * vec[:, 0]) <= 1e-3 * abs(lam) * np.linalg.norm(vec[:, 0]) + 1e-8:
            return lam
        shift = float(min(self.hvals.min(), 0.0)) - 1.0
        try:
            vals = splinalg.eigsh(A, k=1, sigma=shift, which="LM", return_eigenvectors=False, tol=1e-10)
        except Exception as exc:  # ARPACK failures surface as several types
            raise SolverError(f"eigen-iteration failed: {exc}") from exc
        return float(vals[0])

    def solve(self, rhs_interior, boundary_values=None, method: str = "cg",
              rtol: float = 1e-10, maxiter: int = 20000) -> np.ndarray:
        b = np.asarray(rhs_interior, dtype=float).copy()
        if boundary_values is not None:
            b += self.lift(boundary_values)
        if method == "direct":
            if self._lu is None:
                self._lu = splinalg.splu(self.matrix.tocsc())
            return self._lu.solve(b)
        if not np.any(b):
            return np.zeros_like(b)
        precond = sparse.diags(1.0 / self.matrix.diagonal())
        x, info = splinalg.cg(self.matrix, b, rtol=rtol, atol=0.0, maxiter=maxiter, M=precond)
        if info > 0:
            raise IterationLimitError(f"CG did not converge in {maxiter} iterations")
        if info < 0:
            raise SolverError("CG breakdown")
        return x

    def to_field(self, interior_values, boundary_values=None) -> ScalarField3D:
        """Grid field; exterior neighbours get the theta-weighted mean of the
        linear extrapolations through their crossings (the data itself where
        every crossing sits next to the interior node)."""
        g = self.grid
        vals = np.zeros(g.shape)
        vals[g.interior] = interior_values
        if boundary_values is None:
            return ScalarField3D(g, vals)
        if callable(boundary_values):
            node_data = np.zeros(g.shape)
            node_data[g.boundary] = boundary_values(g.points[g.boundary])
        else:
            node_data = np.asarray(boundary_values, dtype=float).reshape(g.shape)
        vals[g.boundary] = node_data[g.boundary]
        if self.boundary == "linear":
            ub = self._crossing_values(boundary_values)
            ui = np.asarray(interior_values)[self.bd_rows]
            th = self.theta
            use = th >= 0.1
            ghost = (ub - (1.0 - th) * ui) / th
            num = np.bincount(self.bd_nodes[use], weights=th[use] * ghost[use], minlength=vals.size)
            den = np.bincount(self.bd_nodes[use], weights=th[use], minlength=vals.size)
            flat = vals.ravel()
            has = den > 0
            flat[has] = num[has] / den[has]
            vals = flat.reshape(g.shape)
        return ScalarField3D(g, vals)


def _crossing_fraction(domain: Domain, points, dirs, spacing: float) -> np.ndarray:
    """Fraction of the step ``spacing * dirs`` from interior ``points`` at
    which the segment leaves the domain."""
    if domain.is_unit_ball:
        pd = np.einsum("ij,ij->i", points, dirs)
        pp = np.einsum("ij,ij->i", points, points)
        return (-pd + np.sqrt(pd * pd + 1.0 - pp)) / spacing
    lo = np.zeros(points.shape[0])
    hi = np.ones(points.shape[0])
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        inside = domain.contains(points + (mid * spacing)[:, None] * dirs)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def _needs_eigen_check(h: CoefficientH, hvals) -> bool:
    return bool(np.min(hvals) < 0)


def solve_dirichlet(h: CoefficientH, rhs, domain: Domain | None = None, grid: Grid3D | None = None,
                    boundary_values=None, rtol: float = 1e-10):
    """``v`` with ``(Delta + h) v = rhs`` in the domain and ``v = 0`` on its
    boundary (or ``boundary_values`` on the boundary nodes of a 3D grid).

    Radial right-hand sides are solved on their own radial grid (ball of
    radius R); Cartesian ones on their grid with diagonally preconditioned CG.
    """
    if isinstance(rhs, ScalarFieldRadial):
        if domain is not None and not domain.is_unit_ball:
            raise ValueError("radial solves live on balls")
        return _solve_radial(h, rhs)
    if isinstance(rhs, ScalarField3D):
        grid = rhs.grid
        f = rhs.interior_values()
    else:
        if grid is None:
            raise ValueError("a callable right-hand side needs a grid")
        f = np.asarray(rhs(grid.points[grid.interior]), dtype=float)
    problem = DirichletProblem3D(grid, h)
    if _needs_eigen_check(h, problem.hvals) and problem.smallest_eigenvalue() <= 0:
        raise IndefiniteSystemError("Delta + h is not coercive on the grid")
    x = problem.solve(f, boundary_values, rtol=rtol)
    return problem.to_field(x, boundary_values)


# --------------------------------------------------------------------------
# coercivity
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoercivityReport:
    coercive: bool
    smallest_eigenvalue: float
    sufficient_l32_bound: bool
    negative_part_l32: float
    sobolev_constant: float
    method: str

    def as_dict(self):
        return dict(self.__dict__)


def coercivity_check(h: CoefficientH, domain: Domain, n_radial: int = 2000, spacing: float = 1 / 24,
                     sobolev_constant: float = SOBOLEV_CONSTANT) -> CoercivityReport:
    """Smallest Dirichlet eigenvalue of ``Delta + h`` and the sufficient
    condition ``||h_-||_{3/2} < S``.

    The L^{3/2} test is a sufficient condition only; when it fails the
    eigenvalue decides.
    """
    neg = volume_integral(lambda p: np.maximum(-h(p), 0.0) ** 1.5, domain) ** (2.0 / 3.0)
    if h.is_radial and domain.is_unit_ball:
        grid = RadialGrid.uniform(1.0, max(n_radial, 1001))  # first node within 1e-3 of the origin
        lam = _radial_smallest_eigenvalue(grid, h.radial(grid.nodes))
        method = f"radial-fd-{n_radial}"
    else:
        problem = DirichletProblem3D(Grid3D(domain, spacing), h)
        lam = problem.smallest_eigenvalue()
        method = f"cartesian-fd-h{spacing:.4g}"
    return CoercivityReport(lam > 0, lam, neg < sobolev_constant, neg, sobolev_constant, method)


# --------------------------------------------------------------------------
# radial shooting for Delta u + h u = u^5
# --------------------------------------------------------------------------

@dataclass
class ShootResult:
    a: float
    endpoint_value: float
    endpoint_slope: float
    stayed_positive: bool
    diverged: bool
    first_zero: float | None
    profile: ScalarFieldRadial | None = field(repr=False, default=None)


def _series_start(h: CoefficientH, a: float, r):
    b = (h.radial(0.0) * a - a**5) / 6.0
    return a + b * r**2, 2.0 * b * r


def radial_shoot(h: CoefficientH, a: float, r_end: float = 1.0, grid: RadialGrid | None = None,
                 rtol: float = 1e-10, atol: float = 1e-10, blowup: float = 1e10) -> ShootResult:
    """Integrate ``u'' + (2/r) u' = h u - u^5``, ``u(0) = a``, ``u'(0) = 0``
    up to ``r_end`` (Dormand-Prince 4(5) in ``t = ln r``).

    This radial ODE is ``Delta u + h u = u^5`` in the analyst sign.  Blow-up
    is reported through ``diverged``; a sign change through
    ``stayed_positive`` and ``first_zero``.
    """
    if a <= 0:
        raise ValueError("initial height must be positive")
    scale = min(1.0, a**-2)
    r0 = 1e-5 * scale * r_end
    u0, du0 = _series_start(h, a, r0)

    def rhs(t, y):
        r = math.exp(t)
        u, p = y
        return [p, -p + r * r * (float(h.radial(r)) * u - u**5)]

    def crossing(t, y):
        return y[0]
    crossing.terminal = False
    crossing.direction = -1

    def explode(t, y):
        return abs(y[0]) - blowup
    explode.terminal = True

    sol = integrate.solve_ivp(rhs, (math.log(r0), math.log(r_end)), [u0, r0 * du0], method="RK45",
                              rtol=rtol, atol=atol, events=(crossing, explode), dense_output=True)
    diverged = sol.status == 1 and len(sol.t_events[1]) > 0
    zeros = np.exp(sol.t_events[0]) if len(sol.t_events[0]) else np.array([])
    first_zero = float(zeros[0]) if zeros.size else None
    u_end, p_end = sol.y[0, -1], sol.y[1, -1]
    r_last = math.exp(sol.t[-1])
    profile = None
    if not diverged:
        if grid is None:
            grid = RadialGrid.graded(r_end, 2001)
        r = grid.nodes
        vals = np.empty(r.size)
        small = r < r0
        vals[small] = _series_start(h, a, r[small])[0]
        vals[~small] = sol.sol(np.log(np.clip(r[~small], r0, r_end)))[0]
        profile = ScalarFieldRadial(grid, vals)
    stayed = first_zero is None or first_zero >= r_end * (1.0 - 1e-14)
    return ShootResult(a, float(u_end), float(p_end / r_last), bool(stayed and not diverged),
                       bool(diverged), first_zero, profile)


@dataclass
class NotFound:
    """No positive radial solution was bracketed by the sweep.

    Evidence at sweep resolution only: a solution between two probes with
    equal-sign shooting values would be missed.
    """

    sweep: list
    reason: str

    def __bool__(self):
        return False


@dataclass
class RadialSolution:
    a: float
    profile: ScalarFieldRadial
    endpoint_value: float
    endpoint_slope: float
    sweep: list = field(repr=False, default_factory=list)


def _shooting_value(res: ShootResult) -> float:
    # continuous through the root: u(1) while positive, minus the distance
    # from the first zero to the endpoint once the profile crosses
    if res.diverged:
        return -1.0
    if res.first_zero is not None and res.first_zero < 1.0:
        return -(1.0 - res.first_zero)
    return res.endpoint_value


def find_radial_solution(h: CoefficientH, a_min: float = 1e-2, a_max: float = 1e3, n_probes: int = 200,
                         grid: RadialGrid | None = None, xtol: float = 1e-14):
    """Positive radial solution of ``Delta u + h u = u^5`` in the unit ball
    with ``u(1) = 0``, bracketed on log-spaced initial heights then bisected."""
    probes = np.geomspace(a_min, a_max, n_probes)
    sweep = []
    prev = None
    for a in probes:
        res = radial_shoot(h, float(a))
        val = _shooting_value(res)
        sweep.append({"a": float(a), "value": val, "stayed_positive": res.stayed_positive,
                      "diverged": res.diverged})
        if prev is not None and prev[1] > 0 and val <= 0:
            if val == 0.0:
                a_star = float(a)
            else:
                a_star = optimize.brentq(lambda s: _shooting_value(radial_shoot(h, s)), prev[0], float(a),
                                         xtol=xtol * float(a), rtol=4 * np.finfo(float).eps, maxiter=200)
            res = radial_shoot(h, a_star, grid=grid or RadialGrid.graded(1.0, 10001))
            vals = res.profile.values.copy()
            vals[-1] = 0.0 if abs(vals[-1]) < 1e-8 * a_star else vals[-1]
            interior_ok = np.all(vals[:-1] > 0)
            if interior_ok and abs(res.endpoint_value) < 1e-8 * max(1.0, a_star):
                log.info("radial solution found at a=%.12g", a_star)
                return RadialSolution(a_star, res.profile.with_values(vals), res.endpoint_value,
                                      res.endpoint_slope, sweep)
        prev = (float(a), val)
    return NotFound(sweep, f"no sign change of the shooting map over a in [{a_min}, {a_max}] "
                           f"({n_probes} log-spaced probes)")
