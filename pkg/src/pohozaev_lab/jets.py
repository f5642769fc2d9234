"""Second-order forward-mode arithmetic for Laplacians of composed fields.

A :class:`Jet` carries, at a batch of points in R^3, the value of a scalar
field, its gradient and its Laplacian.  The Laplacian is the analyst one,
``lap f = -sum_i d_i d_i f``, so that the composition rules read

    lap(f g)    = f lap g + g lap f - 2 grad f . grad g
    lap(phi(f)) = phi'(f) lap f - phi''(f) |grad f|^2

Every constructed solution family in the package is assembled from jets, which
makes its Laplacian exact up to rounding instead of a finite-difference
approximation.
"""
from __future__ import annotations

import numpy as np


def _as_array(x):
    return np.asarray(x, dtype=float)


class Jet:
    __slots__ = ("val", "grad", "lap")
    __array_priority__ = 100.0

    def __init__(self, val, grad, lap):
        self.val = _as_array(val)
        self.grad = _as_array(grad)
        self.lap = _as_array(lap)

    # constructors ---------------------------------------------------------
    @classmethod
    def constant(cls, c, n: int) -> "Jet":
        c = np.broadcast_to(_as_array(c), (n,)).copy()
        return cls(c, np.zeros((n, 3)), np.zeros(n))

    @classmethod
    def coordinate(cls, points, i: int) -> "Jet":
        points = np.atleast_2d(_as_array(points))
        n = points.shape[0]
        grad = np.zeros((n, 3))
        grad[:, i] = 1.0
        return cls(points[:, i].copy(), grad, np.zeros(n))

    @classmethod
    def linear(cls, points, center, coeffs) -> "Jet":
        """The affine field ``<x - center, coeffs>``."""
        points = np.atleast_2d(_as_array(points))
        c = _as_array(coeffs)
        z = points - _as_array(center)
        n = points.shape[0]
        return cls(z @ c, np.broadcast_to(c, (n, 3)).copy(), np.zeros(n))

    @classmethod
    def distance(cls, points, center) -> "Jet":
        """``|x - center|``; singular at the center itself."""
        points = np.atleast_2d(_as_array(points))
        z = points - _as_array(center)
        r = np.sqrt(np.einsum("ij,ij->i", z, z))
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = z / r[:, None]
            lap = -2.0 / r
        return cls(r, grad, lap)

    # basic protocol ---------------------------------------------------------
    def __len__(self):
        return self.val.shape[0]

    def copy(self) -> "Jet":
        return Jet(self.val.copy(), self.grad.copy(), self.lap.copy())

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            return other
        other = _as_array(other)
        n = len(self)
        val = np.broadcast_to(other, (n,)).copy()
        return Jet(val, np.zeros((n, 3)), np.zeros(n))

    def __add__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.val + other, self.grad, self.lap)
        return Jet(self.val + other.val, self.grad + other.grad, self.lap + other.lap)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, -self.grad, -self.lap)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            c = _as_array(other)
            cg = c[..., None] if c.ndim else c
            return Jet(self.val * c, self.grad * cg, self.lap * c)
        val = self.val * other.val
        grad = self.grad * other.val[:, None] + other.grad * self.val[:, None]
        lap = (self.val * other.lap + other.val * self.lap
               - 2.0 * np.einsum("ij,ij->i", self.grad, other.grad))
        return Jet(val, grad, lap)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return self * (1.0 / _as_array(other))
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        p = float(p)
        v = self.val
        return self.apply(v ** p, p * v ** (p - 1.0), p * (p - 1.0) * v ** (p - 2.0))

    # composition ------------------------------------------------------------
    def grad_sq(self):
        return np.einsum("ij,ij->i", self.grad, self.grad)

    def apply(self, f0, f1, f2) -> "Jet":
        """Compose with a scalar function given its value and two derivatives
        evaluated at ``self.val``."""
        f0, f1, f2 = (np.broadcast_to(_as_array(a), self.val.shape) for a in (f0, f1, f2))
        return Jet(f0, self.grad * f1[:, None], f1 * self.lap - f2 * self.grad_sq())

    def reciprocal(self) -> "Jet":
        v = self.val
        return self.apply(1.0 / v, -1.0 / v**2, 2.0 / v**3)

    def sqrt(self) -> "Jet":
        s = np.sqrt(self.val)
        return self.apply(s, 0.5 / s, -0.25 / (s * self.val))

    def exp(self) -> "Jet":
        e = np.exp(self.val)
        return self.apply(e, e, e)

    def log(self) -> "Jet":
        v = self.val
        return self.apply(np.log(v), 1.0 / v, -1.0 / v**2)

    def log1p(self) -> "Jet":
        v = self.val
        return self.apply(np.log1p(v), 1.0 / (1.0 + v), -1.0 / (1.0 + v) ** 2)

    def arctan_inv(self) -> "Jet":
        """``arctan(1/f)`` for positive ``f`` without forming ``1/f``."""
        v = self.val
        d = 1.0 + v * v
        return self.apply(np.arctan2(1.0, v), -1.0 / d, 2.0 * v / d**2)

    def smoothstep(self) -> "Jet":
        """C-infinity step: 0 for f <= 0, 1 for f >= 1.

        Uses the logistic form ``1 / (1 + exp(1/f - 1/(1-f)))``; inside a
        2e-3 margin of the endpoints the derivatives are below 1e-200 and the
        argument is clipped there.
        """
        t = np.clip(self.val, 2e-3, 1.0 - 2e-3)
        z = 1.0 / (1.0 - t) - 1.0 / t
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        e = np.exp(-np.abs(z))
        ds = e / (1.0 + e) ** 2
        z1 = 1.0 / (1.0 - t) ** 2 + 1.0 / t**2
        z2 = 2.0 / (1.0 - t) ** 3 - 2.0 / t**3
        f1 = ds * z1
        f2 = ds * (1.0 - 2.0 * s) * z1**2 + ds * z2
        lo = self.val <= 2e-3
        hi = self.val >= 1.0 - 2e-3
        s = np.where(lo, 0.0, np.where(hi, 1.0, s))
        f1 = np.where(lo | hi, 0.0, f1)
        f2 = np.where(lo | hi, 0.0, f2)
        return self.apply(s, f1, f2)


def where(mask, a: Jet, b: Jet) -> Jet:
    mask = np.asarray(mask, dtype=bool)
    return Jet(np.where(mask, a.val, b.val),
               np.where(mask[:, None], a.grad, b.grad),
               np.where(mask, a.lap, b.lap))


def radial_points(r) -> np.ndarray:
    """Embed radii on the first axis so radial fields can be evaluated as jets."""
    r = np.atleast_1d(_as_array(r))
    pts = np.zeros((r.size, 3))
    pts[:, 0] = r
    return pts
