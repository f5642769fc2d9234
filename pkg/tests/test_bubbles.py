import math

import numpy as np
import pytest

from pohozaev_lab.bubbles import (BubbleConfiguration, EmptyResult, bubble_jet, bubble_profile_psi,
                                  critical_radius, extract_concentration_points, rescale_and_compare,
                                  spherical_profile, standard_bubble)
from pohozaev_lab.fields import ScalarField3D
from pohozaev_lab.geometry import GeometryError, Grid3D


def _synthetic(ball, centers, mu, spacing=1 / 32):
    grid = Grid3D(ball, spacing)
    vals = sum(standard_bubble(grid.points, c, mu) for c in centers)
    return ScalarField3D(grid, np.where(grid.interior, vals, 0.0))


def test_configuration_validation():
    cfg = BubbleConfiguration([(0, 0, 0), (0.5, 0, 0)], (1, 2))
    assert cfg.array.shape == (2, 3) and len(cfg) == 2
    for pts, w in (([(0, 0, 0)], (-1.0,)), ([(0, 0, 0), (0, 0, 0)], (1, 1)), ([(0, 0, 0)], (1, 1))):
        with pytest.raises(ValueError):
            BubbleConfiguration(pts, w)


@pytest.mark.parametrize("mu", [1.0, 0.1, 3.0])
def test_bubble_solves_equation(mu):
    d = np.array([0.3, 0.4, 0.5]) / math.sqrt(0.5)
    p = np.outer(np.geomspace(1e-3, 10.0, 40), d) + np.array([0.1, 0.0, -0.2])
    j = bubble_jet(p, center=(0.1, 0.0, -0.2), mu=mu)
    assert np.max(np.abs(j.lap - j.val**5) / j.val**5) < 1e-12
    assert np.allclose(j.val, standard_bubble(p, (0.1, 0.0, -0.2), mu), rtol=1e-14)
    with pytest.raises(ValueError):
        standard_bubble(p, mu=0.0)


def test_profile_of_unit_bubble_matches_closed_form():
    r = np.linspace(0.05, 4.0, 80)
    prof = spherical_profile(lambda x: standard_bubble(x), (0, 0, 0), r)
    assert np.max(np.abs(np.array(prof)[:, 1] - bubble_profile_psi(r))) < 1e-13
    # the profile turns at sqrt(3)
    r = np.linspace(0.05, 4.0, 400)
    prof = np.column_stack([r, bubble_profile_psi(r)])
    assert abs(r[np.argmax(prof[:, 1])] - math.sqrt(3)) < 0.01


def test_critical_radius():
    r = np.linspace(0.1, 2.0, 20)
    assert critical_radius(np.column_stack([r, 1.0 / r]), 0.1) == pytest.approx(2.0)
    psi = np.where(r < 1.0, 1.0 / r, r)
    rc = critical_radius(np.column_stack([r, psi]), 0.1)
    assert 0.9 <= rc <= 1.1
    with pytest.raises(ValueError):
        critical_radius([(0.1, 1.0), (0.2, 0.5)], 0.0)
    with pytest.raises(ValueError):
        critical_radius(np.column_stack([r[::-1], psi]), 0.0)


def test_extraction_two_bubbles(ball):
    u = _synthetic(ball, [(0.40625, 0, 0), (-0.40625, 0, 0)], 1e-2)
    res = extract_concentration_points(u, ball)
    assert len(res.points) == 2
    assert {round(p[0], 6) for p in res.points} == {0.40625, -0.40625}
    assert res.separation_ok(ball)
    again = extract_concentration_points(u, ball)
    assert again.points == res.points and again.heights == res.heights
    assert res.heights[0] >= res.heights[1]
    assert '"points"' in res.to_json()


def test_extraction_threshold_controls_count(ball):
    u = _synthetic(ball, [(0.25, 0, 0), (-0.25, 0, 0)], 2e-2)
    assert len(extract_concentration_points(u, ball).points) == 2
    assert not extract_concentration_points(u, ball, threshold=1e6)


def test_extraction_empty_for_small_field(ball):
    grid = Grid3D(ball, 1 / 16)
    u = ScalarField3D(grid, np.where(grid.interior, 0.1 * (1 - np.sum(grid.points**2, axis=-1)), 0.0))
    res = extract_concentration_points(u, ball)
    assert isinstance(res, EmptyResult) and not res


def test_rescale_and_compare(ball):
    c = np.array([0.1, -0.2, 0.0])
    f = lambda x: standard_bubble(x, c, 0.05)
    assert rescale_and_compare(f, c, domain=ball) < 1e-12
    assert rescale_and_compare(f, c, mu=0.06, domain=ball) > 1e-2
    with pytest.raises(GeometryError):
        rescale_and_compare(f, c, mu=0.5, domain=ball)
