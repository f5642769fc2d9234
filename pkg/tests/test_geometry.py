import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pohozaev_lab.geometry import (OMEGA_2, Domain, GeometryError, Grid3D, RadialGrid, SphereRule, sphere_average,
                                   surface_integral, volume_integral)


def test_sphere_rule_integrates_polynomials():
    rule = SphereRule(16, 32)
    d = rule.directions
    assert math.isclose(rule.weights.sum(), OMEGA_2, rel_tol=1e-13)
    assert math.isclose(rule.weights @ d[:, 2] ** 2, OMEGA_2 / 3, rel_tol=1e-13)
    assert abs(rule.weights @ (d[:, 0] * d[:, 1])) < 1e-14


def test_ball_volume_and_area(ball):
    assert math.isclose(volume_integral(lambda p: np.ones(len(p)), ball), 4 * math.pi / 3, rel_tol=1e-12)
    assert math.isclose(surface_integral(lambda p, n: np.ones(len(p)), ball), 4 * math.pi, rel_tol=1e-12)
    # divergence theorem: int <x, nu> = 3 |B|
    assert math.isclose(surface_integral(lambda p, n: np.einsum("ij,ij->i", p, n), ball), 4 * math.pi, rel_tol=1e-12)


def test_star_domain_divergence_theorem():
    dom = Domain.from_coefficients({(0, 0): 1.0, (2, 0): 0.1, (1, 1): 0.05})
    vol = volume_integral(lambda p: np.ones(len(p)), dom)
    flux = surface_integral(lambda p, n: np.einsum("ij,ij->i", p, n), dom)
    assert math.isclose(flux, 3 * vol, rel_tol=1e-6)
    ok, margin = dom.star_certificate()
    assert ok and margin > 0


@given(st.floats(0.0, 0.99))
@settings(max_examples=30, deadline=None)
def test_ball_distance(r):
    p = np.array([[r, 0.0, 0.0]])
    assert math.isclose(Domain.unit_ball().distance_to_boundary(p)[0], 1 - r, abs_tol=1e-15)


def test_radial_simpson_weights_are_exact_for_polynomials():
    g = RadialGrid.graded(1.0, 801)
    w = g.simpson_weights()
    assert math.isclose(w.sum(), 4 * math.pi / 3, rel_tol=1e-8)
    assert math.isclose(w @ g.nodes**2, 4 * math.pi / 5, rel_tol=1e-8)


def test_radial_grid_validation():
    with pytest.raises(ValueError):
        RadialGrid(np.array([0.1, 0.05, 0.2]))
    with pytest.raises(ValueError):
        RadialGrid(np.array([0.1, 0.5, 1.0]))  # does not approach the origin


def test_grid3d_masks(ball):
    g = Grid3D(ball, 0.1)
    assert not np.any(g.interior & g.boundary)
    assert np.all(np.linalg.norm(g.points[g.interior], axis=-1) < 1)
    assert np.all(np.linalg.norm(g.points[g.boundary], axis=-1) >= 1)
    assert g.index_of([0, 0, 0]) == tuple(np.array(g.shape) // 2)


def test_sphere_average_of_harmonic_function(ball):
    f = lambda p: 1.0 + p[:, 0] + p[:, 0] ** 2 - p[:, 1] ** 2
    assert math.isclose(sphere_average(f, [0.1, 0.2, 0.0], 0.3, ball), f(np.array([[0.1, 0.2, 0.0]]))[0],
                        rel_tol=1e-13)
    with pytest.raises(GeometryError):
        sphere_average(f, [0.9, 0, 0], 0.3, ball)
