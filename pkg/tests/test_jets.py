import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from pohozaev_lab.jets import Jet, radial_points, where


def fd_check(fun, points, step=1e-4):
    """Central-difference value/gradient/Laplacian of ``fun`` (points -> Jet)."""
    j = fun(points)
    grad = np.zeros_like(points)
    lap = np.zeros(points.shape[0])
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        fp, fm = fun(points + e).val, fun(points - e).val
        grad[:, i] = (fp - fm) / (2 * step)
        lap -= (fp - 2 * j.val + fm) / step**2
    return j, grad, lap


def test_coordinate_and_linear():
    p = np.array([[0.1, -0.2, 0.3], [1.0, 2.0, 3.0]])
    x = Jet.coordinate(p, 1)
    assert np.allclose(x.val, p[:, 1])
    assert np.allclose(x.grad, [[0, 1, 0]] * 2)
    lin = Jet.linear(p, [1, 1, 1], [2, 0, -1])
    assert np.allclose(lin.val, (p - 1) @ np.array([2, 0, -1]))
    assert np.all(lin.lap == 0)


def test_distance_laplacian_is_analyst_sign():
    p = np.array([[0.3, 0.4, 0.0]])
    r = Jet.distance(p, np.zeros(3))
    assert np.isclose(r.val[0], 0.5)
    assert np.isclose(r.lap[0], -2.0 / 0.5)  # -(r'' + 2 r'/r)


def test_product_and_composition_against_fd():
    rng = np.random.default_rng(1)
    p = rng.uniform(0.2, 0.8, size=(20, 3))

    def fun(q):
        x, y, z = (Jet.coordinate(q, i) for i in range(3))
        return (x * y + 2.0).log() * (z * z + 1.0).sqrt() / (x + 3.0) + (y * 0.5).exp() + x.arctan_inv()
    j, grad, lap = fd_check(fun, p)
    assert np.allclose(j.grad, grad, atol=1e-7)
    assert np.allclose(j.lap, lap, atol=1e-5)


@given(st.floats(-2.5, 2.5), st.floats(0.1, 3.0))
@settings(max_examples=50, deadline=None)
def test_power_rule(p, base):
    q = np.array([[base, 0.3, -0.2]])
    f = lambda pts: (Jet.coordinate(pts, 0) * Jet.coordinate(pts, 0) + 1.0) ** p
    j, grad, lap = fd_check(f, q, step=1e-4)
    assert np.allclose(j.grad, grad, rtol=1e-5, atol=1e-7)
    assert np.allclose(j.lap, lap, rtol=1e-3, atol=1e-4)


def test_smoothstep_limits_and_flatness():
    p = radial_points(np.array([-0.5, 0.0, 0.5, 1.0, 1.5]) + 10.0)
    t = Jet.coordinate(p, 0) - 10.0
    s = t.smoothstep()
    assert s.val[0] == 0 and s.val[1] == 0
    assert np.isclose(s.val[2], 0.5)
    assert s.val[3] == 1 and s.val[4] == 1
    assert np.all(s.grad[[0, 4]] == 0)


def test_where_selects_rows():
    p = np.array([[1.0, 0, 0], [2.0, 0, 0]])
    a, b = Jet.coordinate(p, 0), Jet.constant(7.0, 2)
    w = where(np.array([True, False]), a, b)
    assert np.allclose(w.val, [1.0, 7.0])
