import math

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import modes, quad_system, site
from resweb.averaged import (
    MechanicalSystem,
    PeriodicOrbit,
    alpha_beta,
    embed_points,
    embedding_diameter_slope,
    loop_distance,
    minimal_orbit,
    osc_y,
    overlap_check,
    scan_channel,
    unembed_points,
)
from resweb.errors import NonConvexSamples
from resweb.normalform import build_chain
from resweb.torus import TorusPotential


@pytest.fixture(scope="module")
def pend():
    return MechanicalSystem(np.eye(2), TorusPotential.pendulum(0, 1.0))


@pytest.fixture(scope="module")
def free():
    return MechanicalSystem(np.eye(2), TorusPotential())


@pytest.fixture(scope="module")
def pend_channel(pend):
    return scan_channel(pend, (1, 0), (2.2, 4.0), n_grid=16)


def _quadrature(E):
    tau = quad(lambda p: 1 / math.sqrt(2 * (E + math.cos(p) - 1)), 0, 2 * math.pi, epsabs=1e-13)[0]
    J = quad(lambda p: math.sqrt(2 * (E + math.cos(p) - 1)), 0, 2 * math.pi, epsabs=1e-13)[0]
    return tau, J - E * tau


def test_mechanical_system_rejects_indefinite():
    with pytest.raises(ValueError):
        MechanicalSystem(np.diag([1.0, -1.0]), TorusPotential())


def test_rotation_orbit_against_quadrature(pend):
    o = minimal_orbit(pend, (1, 0), energy=3.0)
    tau, S = _quadrature(3.0)
    assert o.tau == pytest.approx(tau, abs=1e-4)
    assert o.action == pytest.approx(S, abs=1e-4)
    assert o.el_residual < 1e-8
    m1, m2 = o.floquet
    assert abs(m1 * m2 - 1) < 1e-6
    # Osc of y along the orbit: max - min of sqrt(2 (3 + V)) = sqrt(6) - sqrt(2)
    assert osc_y(o, pend) == pytest.approx(math.sqrt(6) - math.sqrt(2), abs=1e-3)


def test_constant_angle_orbit(pend):
    o = minimal_orbit(pend, (0, 1), tau=2 * math.pi)
    assert o.action == pytest.approx(-3 * math.pi, abs=1e-6)
    np.testing.assert_allclose(np.cos(o.nodes[:, 0]), -1, atol=1e-6)


def test_free_motion_is_degenerate(free):
    o = minimal_orbit(free, (1, 0), tau=2 * math.pi)
    assert o.action == pytest.approx(math.pi, abs=1e-8)
    assert o.flags["type"] == "degenerate"
    assert all(abs(m - 1) < 1e-6 for m in o.floquet)


def test_orbit_input_validation(pend):
    with pytest.raises(ValueError):
        minimal_orbit(pend, (2, 0), tau=1.0)
    with pytest.raises(ValueError):
        minimal_orbit(pend, (1, 0), tau=1.0, energy=3.0)
    with pytest.raises(ValueError):
        minimal_orbit(pend, (1, 0), energy=1.0)


def test_discretization_convergence(pend):
    a = minimal_orbit(pend, (1, 0), tau=2.0, N=128, refine=False)
    b = minimal_orbit(pend, (1, 0), tau=2.0, N=256, refine=False)
    r = minimal_orbit(pend, (1, 0), tau=2.0, N=256)
    # the discrete action converges at second order to the refined one
    assert abs(b.action - r.action) < abs(a.action - r.action) / 3
    assert abs(b.action - r.action) < 1e-3


def test_loop_distance_is_shift_invariant(pend):
    o = minimal_orbit(pend, (1, 0), tau=2.0, refine=False)
    assert loop_distance(o.nodes, o.nodes, pend.V, (1, 0)) < 1e-12
    shifted = o.nodes + np.array([0.0, 1.3])
    # V ignores phi2, so the phi2 offset is not a different orbit
    assert loop_distance(o.nodes, shifted, pend.V, (1, 0)) < 1e-12


def test_pendulum_channel(pend_channel):
    ch = pend_channel
    assert ch.bifurcations == []
    assert ch.E_levels == []
    assert not ch.degenerate or all(o.flags["type"] == "degenerate" for o in ch.orbits)
    assert max(ch.osc_measured) <= ch.osc_bound
    ab = ch.alpha
    assert ab.duality_gap_min >= -1e-8
    assert np.all(np.diff(np.diff(ab.beta) / np.diff(ab.lam)) >= -1e-8)


def test_fenchel_inequality_on_grid(pend_channel):
    ab = pend_channel.alpha
    gap = ab.alpha_discrete[:, None] + ab.beta[None, :] - ab.sigma[:, None] * ab.lam[None, :]
    assert gap.min() >= -1e-8


def test_symmetric_double_well_bifurcates():
    ms = MechanicalSystem(np.eye(2), TorusPotential.from_terms([((2, 0), 1.0, 0.0)], const=-1.0))
    ch = scan_channel(ms, (0, 1), (2.5, 4.0), n_grid=16)
    assert len(ch.bifurcations) == len(ch.energies)
    # symmetry oracle: the two wells phi1 = 0 and phi1 = pi give the same action
    for b in ch.bifurcations:
        assert b["action_gap"] < 1e-7
        assert b["separation"] > 1.0


def test_free_channel_degenerate(free):
    ch = scan_channel(free, (1, 0), (0.5, 2.0), n_grid=16, with_alpha=False)
    assert ch.degenerate
    assert ch.E_levels == []


def test_free_alpha_beta_self_dual(free):
    taus = 2 * math.pi / np.array([0.5, 1.0, 1.5, 2.0, 2.5])
    orbs = [minimal_orbit(free, (1, 0), tau=float(t), N=64) for t in taus]
    ab = alpha_beta(orbs, free)
    lam = ab.lam[1:]
    np.testing.assert_allclose(ab.beta[1:], 0.5 * lam ** 2, atol=1e-8)
    np.testing.assert_allclose(ab.alpha[1:], 0.5 * lam ** 2, atol=1e-8)
    # the supporting class of rho is rho itself
    np.testing.assert_allclose(ab.sigma[1:], lam, atol=1e-8)
    assert ab.duality_gap_matched < 1e-8


def _fake_orbit(lam, beta):
    tau = 2 * math.pi / lam
    return PeriodicOrbit((1, 0), tau, np.zeros((4, 2)), np.zeros((4, 2)), beta * tau, 0.0,
                         (1, 1), {}, 0.0, 0.0)


def test_nonconvex_beta_refused():
    orbs = [_fake_orbit(1.0, 1.0), _fake_orbit(2.0, 1.5), _fake_orbit(3.0, 3.0)]
    with pytest.raises(NonConvexSamples) as ei:
        alpha_beta(orbs, beta0=0.0)
    assert ei.value.triple == (0.0, 1.0, 2.0)


@pytest.fixture(scope="module")
def flagship_chain():
    sys = quad_system(modes(((1, 0, 0), "1"), ((0, 1, -1), "1")))
    return build_chain(sys, site(sys))


def test_embedding_fixed_point_and_roundtrip(flagship_chain, rng):
    ch = flagship_chain
    np.testing.assert_array_equal(embed_points(np.zeros((1, 2)), np.zeros(1), ch), 0.0)
    c = rng.uniform(-2, 2, (50, 2))
    a = rng.uniform(-1, 3, 50)
    c2, a2 = unembed_points(embed_points(c, a, ch), ch)
    assert np.abs(c2 - c).max() < 1e-12
    assert np.abs(a2 - a).max() < 1e-12


def test_embedding_unsheared_site_keeps_first_components():
    sys = quad_system(modes(((1, 0, 0), "1"), ((0, 1, 0), "1")))
    ch = build_chain(sys, site(sys, k2=(0, 1, 0)))
    c = np.array([[0.3, -0.7], [1.0, 2.0]])
    dp = embed_points(c, np.zeros(2), ch)
    np.testing.assert_allclose(dp[:, :2], math.sqrt(sys.eps) * c, atol=1e-15)


def test_embedding_diameter_scales_as_sqrt_eps(pend_channel, flagship_chain):
    import dataclasses

    eps_list = [1e-3, 1e-4, 1e-5, 1e-6]
    slope, diams = embedding_diameter_slope(
        pend_channel, lambda e: dataclasses.replace(flagship_chain, eps=e), eps_list)
    assert slope == pytest.approx(0.5, abs=0.05)
    assert diams[-1] < diams[0]


def test_overlap_single_site_with_itself():
    p = np.array([0.0, 1.0, 1.0])
    t = np.linspace(-0.01, 0.01, 41)
    pts = p + t[:, None] * np.array([0.0, 1.0, -1.0]) / math.sqrt(2)
    rep = overlap_check(pts, [(p, 1, None), (p, 1, None)], 1e-4, 1.0, 0.15)
    assert rep.passed
    assert rep.length > 0.02


def test_overlap_fails_for_separated_sites():
    p1 = np.array([0.0, 1.0, 1.0])
    p2 = np.array([0.0, -1.0, 1.0])
    ang = np.linspace(0, 2 * np.pi, 2000, endpoint=False)
    pts = math.sqrt(2) * np.stack([0 * ang, np.cos(ang), np.sin(ang)], axis=1)
    rep = overlap_check(pts, [(p1, 1, None), (p2, 1, None)], 1e-4, 1.0, 0.15)
    assert rep.length == 0.0 and not rep.passed
