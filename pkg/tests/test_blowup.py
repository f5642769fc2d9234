import csv
import math

import numpy as np
import pytest

from pohozaev_lab.blowup import (RESCALE, ConstructionError, PositivityError, ProfileFunctions,
                                 RadialFamilyParams, ResidualSweep, TwoBubbleFamily, balance_configuration,
                                 cutoff_jet, family_grid, instability_sweep, radial_family, radial_family_jet,
                                 radial_residual, residual_potential, stratified_samples,
                                 verify_piece_identities)
from pohozaev_lab.bubbles import bubble_jet
from pohozaev_lab.fields import CoefficientH
from pohozaev_lab.jets import Jet, radial_points

ZERO = CoefficientH.constant(0.0)


def _line(r):
    r = np.asarray(r, dtype=float)
    g = np.zeros((r.size, 3))
    g[:, 0] = 1.0
    return Jet(r, g, np.zeros(r.size))


@pytest.fixture(scope="module")
def zero_config():
    return balance_configuration(ZERO, eps=1e-2)


def test_profile_limits():
    prof = ProfileFunctions(1e-2)
    assert abs(prof.W(1e-9)[0] + math.pi) < 1e-6
    assert abs(prof.W(1e7)[0] + 21 / 4) < 1e-6
    assert abs(prof.V(1e-6)[0]) < 1e-11 and abs(prof.V(1e6)[0] - 1) < 1e-12
    assert abs(prof.U(1e6)[0] - 1) < 1e-11


def test_profile_U_derivatives():
    r = np.geomspace(1e-4, 1e4, 60)
    U = ProfileFunctions.U_jet(_line(r))
    # for a line jet the Laplacian slot holds minus the second derivative
    assert np.allclose(U.grad[:, 0], U.val**3 / r**3, rtol=1e-12)
    assert np.allclose(U.lap, 3 * U.val**5 / r**4, rtol=1e-12)


def test_psi_ends():
    eps = 1e-3
    prof = ProfileFunctions(eps)
    # psi(eps G) at G = 1/|x| equals ln(eps^2 + |x|^2)/ln(eps^2)
    x = np.array([1e-9, 0.3, 1.0])
    assert np.allclose(prof.psi(eps / x), np.log(eps**2 + x**2) / math.log(eps**2), rtol=1e-12)
    assert abs(prof.psi(eps / 1e-12)[0] - 1) < 1e-9


def test_cutoff():
    pts = radial_points([0.1, 0.25, 0.5, 0.9])
    c = cutoff_jet(pts, np.zeros(3), 0.25, 0.5)
    assert np.allclose(c.val, [1, 1, 0, 0])
    assert np.allclose(c.lap[[0, 3]], 0)


def test_radial_family_values():
    params = RadialFamilyParams.build(ZERO, 1e-2)
    assert params.mass == pytest.approx(-1.0)
    j = radial_family_jet(params, radial_points([1e-12, 1.0 - 1e-12]))
    assert j.val[0] == pytest.approx(10.0, rel=1e-9)
    assert abs(j.val[1]) < 1e-9
    u = radial_family(params, family_grid(1e-2))
    assert u.values[-1] == 0 and np.all(u.values[:-1] > 0)
    with pytest.raises(ValueError):
        RadialFamilyParams.build(ZERO, 0.5)


def test_residual_round_trip():
    pts = radial_points(np.linspace(0.0, 1.0, 50)) + np.array([0.0, 0.1, 0.0])
    b = bubble_jet(pts, mu=0.3) * (1.0 / RESCALE)
    res = residual_potential(b, ZERO, pts)
    assert res.linf_norm < 1e-12
    v, ht = res.rescaled
    assert np.allclose(v, bubble_jet(pts, mu=0.3).val)
    with pytest.raises(PositivityError):
        residual_potential(b * -1.0, ZERO, pts)


def test_radial_residual_decays():
    base = RadialFamilyParams.build(ZERO, 1e-2)
    norms = [radial_residual(base.with_eps(e)).l3_norm for e in (1e-2, 1e-3)]
    assert norms[1] < norms[0]
    # ln(1/eps) scaling
    assert norms[1] / norms[0] == pytest.approx(2 / 3, abs=0.03)


def test_radial_fd_matches_analytic():
    params = RadialFamilyParams.build(ZERO, 1e-2)
    grid = family_grid(1e-2)
    fd = residual_potential(radial_family(params, grid), ZERO)
    an = radial_residual(params, grid)
    assert fd.method == "finite-difference" and an.method == "analytic"
    assert abs(fd.l3_norm - an.l3_norm) < 1e-2 * an.l3_norm


def test_balance_zero_h(zero_config):
    p = zero_config
    assert p.x1 == (0.0, 0.0, 0.0)
    assert max(abs(r) for r in p.balance_residuals()) < 1e-9
    assert 0 < np.linalg.norm(p.x2) < 1
    other = balance_configuration(ZERO, eps=1e-2, direction=(0.0, 1.0, 0.0))
    assert np.linalg.norm(other.x2) == pytest.approx(np.linalg.norm(p.x2), rel=1e-8)
    assert other.lam == pytest.approx(p.lam, rel=1e-8)


def test_two_bubble_family(zero_config):
    fam = TwoBubbleFamily(zero_config)
    x1, x2 = np.array(zero_config.x1), np.array(zero_config.x2)
    # beyond twice the cutoff radius only the two main terms survive
    far = np.array([[0.0, 0.0, 0.8]])
    assert min(np.linalg.norm(far - x1), np.linalg.norm(far - x2)) > 2 * zero_config.delta
    a1, a2, c1, c2 = fam.terms(far)
    assert c1.val[0] == 0 and c2.val[0] == 0
    near = x1 + np.array([[1e-10, 0.0, 0.0]])
    a1, a2, c1, c2 = fam.terms(near)
    assert a1.val[0] == pytest.approx(zero_config.eps**-0.5, rel=1e-6)
    assert fam(near)[0] == pytest.approx(a1.val[0] + a2.val[0] + c1.val[0] + c2.val[0])
    pts = stratified_samples(zero_config, 2000, seed=3)
    assert pts.shape == (2000, 3)
    assert np.array_equal(pts, stratified_samples(zero_config, 2000, seed=3))
    assert np.all(fam(pts) > 0)


def test_piece_identities(zero_config):
    a = verify_piece_identities(zero_config, 1e-2)
    b = verify_piece_identities(zero_config, 1e-3)
    assert a["U_exact"] < 1e-8 and a["V_exact"] < 1e-8
    for k in ("U", "V", "W", "Y"):
        assert b["remainder_ratio"][k] < 0.2 * a["remainder_ratio"][k]


def test_sweep_csv(tmp_path):
    sw = instability_sweep("radial", ZERO, [1e-2, 1e-3])
    path = sw.write_csv(tmp_path / "sweep.csv")
    rows = list(csv.reader(open(path)))
    assert rows[0][:3] == ["eps", "l3_norm", "linf_norm"]
    assert len(rows) == 3
    assert all(sw.positivity_ok)
    assert '"mode": "radial"' in sw.to_json()
    with pytest.raises(ValueError):
        ResidualSweep("radial", [1e-3, 1e-2], [1, 1], [1, 1], [1, 1], [True, True])
    with pytest.raises(ValueError):
        instability_sweep("spiral", ZERO, [1e-2])


def test_construction_error_when_family_not_positive():
    params = RadialFamilyParams(0.05, RadialFamilyParams.build(ZERO, 1e-2).green, mass=400.0)
    with pytest.raises(ConstructionError):
        radial_family(params, family_grid(0.05))
