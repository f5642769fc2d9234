import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pohozaev_lab.fields import CoefficientH
from pohozaev_lab.geometry import OMEGA_2, Domain, GeometryError
from pohozaev_lab.green import (SCALED, UNIT, ExpansionError, GreenExpansion, ImagesGreen, NormalizationError,
                                RadialGreen, SingularityError, ball_grad_regular, ball_mass, extract_expansion,
                                laplace_green_ball, mass_sign_scan, regular_part_defect, solve_green)
from pohozaev_lab.jets import radial_points

ZERO = CoefficientH.constant(0.0)
inner = st.floats(-0.55, 0.55)


@given(inner, inner, inner, inner)
@settings(max_examples=40, deadline=None)
def test_images_symmetry_and_boundary(a, b, c, d):
    x, y = np.array([a, b, 0.1]), np.array([c, 0.2, d])
    if np.linalg.norm(x - y) < 1e-3:
        return
    assert math.isclose(laplace_green_ball(x, y), laplace_green_ball(y, x), rel_tol=1e-10)
    nu = np.array([[0.6, 0.0, 0.8], [0.0, -1.0, 0.0]])
    assert np.max(np.abs(laplace_green_ball(x, nu))) < 1e-12


def test_images_singularity_and_closed_forms():
    with pytest.raises(SingularityError):
        laplace_green_ball([0.1, 0, 0], [0.1, 0, 0])
    x = np.array([0.3, -0.2, 0.1])
    e = extract_expansion(ImagesGreen(x), ZERO)
    assert abs(e.mass - ball_mass(x)) < 1e-6
    assert np.allclose(e.grad_regular, ball_grad_regular(x), atol=1e-5)


def test_images_jet_is_harmonic():
    gf = ImagesGreen(np.array([0.2, 0.1, 0.0]))
    p = np.array([[0.5, -0.3, 0.2], [-0.6, 0.1, 0.4]])
    j = gf.jet(p)
    assert np.allclose(j.lap, 0.0, atol=1e-10)
    assert np.allclose(j.val, laplace_green_ball(gf.source, p))


@pytest.mark.parametrize("c,mass", [(0.0, -1.0), (1.0, -1.0 / math.tanh(1.0)),
                                    (-2.0, -math.sqrt(2) / math.tan(math.sqrt(2)))])
def test_radial_green_constant_potential(c, mass):
    gf = RadialGreen(CoefficientH.constant(c))
    assert math.isclose(gf.exact_expansion().mass, mass, rel_tol=1e-12)
    r = np.geomspace(1e-2, 1.0, 50)
    if c == 0.0:
        assert np.max(np.abs(gf.radial_values(r) - (1 / r - 1))) < 1e-12


def test_radial_green_ode_path_matches_limits():
    tiny = RadialGreen(CoefficientH.polynomial([0.0, 0.0, 1e-9]))
    assert abs(tiny.exact_expansion().mass + 1.0) < 1e-8
    gf = RadialGreen(CoefficientH.polynomial([0.0, 0.0, 1.0]))
    r = np.array([0.1, 0.5, 0.9])
    j = gf.jet(radial_points(r))
    # (Delta + |x|^2) G = 0 off the source
    assert np.allclose(j.lap, -(r**2) * j.val, rtol=1e-12)
    assert abs(gf.radial_values(np.array([1.0]))[0]) < 1e-10


def test_normalizations_round_trip():
    e = GreenExpansion((0, 0, 0), -1.0, (0.1, 0, 0), 0.0)
    u = e.to(UNIT)
    assert math.isclose(u.mass, -1.0 / OMEGA_2)
    back = GreenExpansion.from_json(u.to(SCALED).to_json())
    assert math.isclose(back.mass, -1.0) and back.normalization == SCALED
    with pytest.raises(NormalizationError):
        e.to("natural")
    gf = ImagesGreen(np.zeros(3), normalization=UNIT)
    assert math.isclose(gf(np.array([[0.5, 0, 0]]))[0], 1.0 / OMEGA_2, rel_tol=1e-12)


@pytest.mark.parametrize("split", ["images", "free"])
def test_cartesian_green_against_images(split):
    x = np.array([0.5, 0.0, 0.0])
    gf = solve_green(ZERO, x, spacing=1 / 32, method="cartesian", split=split)
    e = extract_expansion(gf, ZERO)
    assert abs(e.mass / ball_mass(x) - 1) < 5e-3
    assert np.allclose(e.grad_regular, ball_grad_regular(x), atol=2e-2)
    p = np.array([[-0.3, 0.2, 0.1], [0.1, -0.5, 0.3]])
    assert np.allclose(gf(p), laplace_green_ball(x, p), rtol=5e-3)


def test_cartesian_green_nonzero_h_matches_radial_oracle():
    h = CoefficientH.constant(1.0)
    ref = RadialGreen(h).exact_expansion().mass
    gf = solve_green(h, np.zeros(3), spacing=1 / 32, method="cartesian", split="free")
    assert abs(extract_expansion(gf, h).mass - ref) < 1e-4


def test_star_shaped_domain_free_split():
    dom = Domain.from_coefficients({(0, 0): 1.0, (2, 0): 0.1})
    gf = solve_green(ZERO, np.zeros(3), dom, spacing=1 / 24)
    e = extract_expansion(gf, ZERO)
    assert -1.2 < e.mass < -0.8
    assert regular_part_defect(gf, e, 0.02) < 1e-3


def test_solver_preconditions(ball):
    with pytest.raises(GeometryError):
        solve_green(ZERO, [1.2, 0, 0])
    with pytest.raises(GeometryError):
        solve_green(ZERO, [0.97, 0, 0], method="cartesian", spacing=1 / 32)
    with pytest.raises(ValueError):
        solve_green(CoefficientH.constant(1.0), [0.1, 0, 0], method="images")


def test_expansion_fit_rejects_bad_fields():
    gf = ImagesGreen(np.array([0.1, 0, 0]))
    noisy = ImagesGreen(np.array([0.1, 0, 0]))
    noisy.regular = lambda p: np.sin(400 * p[:, 0]) * 50
    with pytest.raises(ExpansionError):
        extract_expansion(noisy, ZERO)
    assert extract_expansion(gf, ZERO).fit_residual < 1e-8


def test_mass_sign_scan_orders_points():
    scan = mass_sign_scan(ZERO, Domain.unit_ball(), [[0, 0, 0], [0.5, 0, 0], [0, 0.7, 0]], method="images")
    assert np.allclose(scan.masses, [-1.0, -4 / 3, -1 / 0.51])
    assert scan.most_negative == 2
