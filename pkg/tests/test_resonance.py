import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import modes, quad_system
from resweb.errors import CoverFails, DegenerateSingleResonance, NoResonanceWithinDelta
from resweb.lattice import rational_period, unimodular_complete
from resweb.resonance import (
    candidate_path,
    classify,
    cover_check,
    dirichlet_cover,
    find_double_resonances,
    period_bound,
    trace_circle,
)


def _perimeter_oracle(Q, k, E, n=1_000_000):
    """Dense polar march of {<Qp,p>/2 = E} intersected with the plane <k, Qp> = 0."""
    nrm = Q @ np.asarray(k, float)
    nrm /= np.linalg.norm(nrm)
    u = np.cross(nrm, [1.0, 0, 0] if abs(nrm[0]) < 0.9 else [0, 1.0, 0])
    u /= np.linalg.norm(u)
    v = np.cross(nrm, u)
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    w = np.cos(t)[:, None] * u + np.sin(t)[:, None] * v
    r = np.sqrt(2 * E / np.einsum("ij,jk,ik->i", w, Q, w))
    pts = r[:, None] * w
    return float(np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1).sum())


def test_circle_great_circle_111():
    c = trace_circle(quad_system(E=0.5), (1, 1, 1), 256)
    assert max(c.residuals()) < 1e-10
    np.testing.assert_allclose(np.linalg.norm(c.samples, axis=1), 1, atol=1e-10)
    np.testing.assert_allclose(c.samples.sum(axis=1), 0, atol=1e-10)
    assert c.length == pytest.approx(2 * np.pi, rel=1e-3)


def test_circle_axis_plane():
    c = trace_circle(quad_system(E=0.5), (1, 0, 0), 128)
    np.testing.assert_allclose(c.samples[:, 0], 0, atol=1e-10)
    np.testing.assert_allclose(c.samples[:, 1] ** 2 + c.samples[:, 2] ** 2, 1, atol=1e-10)


def test_circle_ellipsoid_against_dense_oracle():
    Q = np.diag([1.0, 2.0, 3.0])
    c = trace_circle(quad_system(Q=Q, E=1.0, radius=3.0), (1, 1, 1), 2048)
    assert max(c.residuals()) < 1e-9
    assert c.length == pytest.approx(_perimeter_oracle(Q, (1, 1, 1), 1.0), abs=1e-4)


def test_double_resonance_axis_points():
    sys = quad_system(E=0.5)
    drs = find_double_resonances(trace_circle(sys, (1, 0, 0), 64), sys, 1e-4, 0.15, 1.0)
    pts = sorted(tuple(np.round(d.p_dd, 10)) for d in drs if abs(d.k_second[2]) == 0)
    assert pts == [(0, 0, -1), (0, 0, 1)]


def test_double_resonance_diagonal_site():
    sys = quad_system(E=1.0)
    drs = find_double_resonances(trace_circle(sys, (1, 0, 0), 64), sys, 1e-4, 0.15, 1.0)
    hits = [d for d in drs if d.k_second in ((0, 1, -1), (0, -1, 1))]
    pts = sorted(tuple(d.p_dd) for d in hits)
    # hand solution: p1 = 0, p2 = p3, |p|^2 = 2
    np.testing.assert_allclose(pts, [(0, -1, -1), (0, 1, 1)], atol=1e-10)
    assert all(d.T == 1 for d in hits)
    plus = [d for d in hits if d.p_dd[1] > 0][0]
    np.testing.assert_allclose(plus.omega, (0, 1, 1), atol=1e-10)


def test_period_bound_value():
    b = period_bound(1e-4, 0.15, 1.0)
    assert b == pytest.approx(10 ** 0.7333333, rel=1e-6)
    sys = quad_system(E=1.0)
    drs = find_double_resonances(trace_circle(sys, (1, 0, 0), 64), sys, 1e-4, 0.15, 1.0)
    assert {d.T for d in drs} == {1, 2, 3, 4, 5}


def test_double_resonance_count_matches_totient_oracle():
    sys = quad_system(E=1.0)
    drs = find_double_resonances(trace_circle(sys, (1, 0, 0), 64), sys, 1e-4, 0.15, 1.0)
    # 8 * sum of Euler phi(T) for T <= 5: primitive (a,b) with max(|a|,|b|) = T, two signs each
    phi = lambda n: sum(1 for j in range(1, n + 1) if math.gcd(j, n) == 1)
    assert len(drs) == 8 * sum(phi(t) for t in range(1, 6))


@pytest.mark.parametrize("k", [(1, 0, 0), (1, 1, 1), (2, 3, 5)])
def test_double_resonance_conditions_and_period(k):
    sys = quad_system(E=1.0, Q=np.diag([1.0, 1.5, 2.0]), radius=3.0)
    drs = find_double_resonances(trace_circle(sys, k, 128), sys, 1e-3, 0.15, 1.0)
    assert drs
    M0 = np.array(unimodular_complete(k).M0, float)
    for d in drs:
        w = sys.h.grad(d.p_dd)
        assert abs(w @ np.array(k)) < 1e-10 * np.linalg.norm(w)
        assert abs(w @ np.array(d.k_second)) < 1e-10 * np.linalg.norm(w)
        assert sys.h.value(d.p_dd) == pytest.approx(1.0, abs=1e-12)
        exact = d.normalized_rotated_frequency()
        assert rational_period(exact) == d.T
        wb = M0 @ w
        np.testing.assert_allclose(wb / np.abs(wb).max(), [float(x) for x in exact], atol=1e-10)


def test_cover_verified_at_1e3():
    sys = quad_system(E=0.5)
    rep = dirichlet_cover(trace_circle(sys, (1, 1, 1), 256), sys, 1e-3, 0.15, 1.0, 10_000)
    assert rep.covered and rep.uncovered_samples == []
    assert rep.max_period <= period_bound(1e-3, 0.15, 1.0)


def test_cover_fails_with_tiny_K_star():
    sys = quad_system(E=0.5)
    circ = trace_circle(sys, (1, 1, 1), 256)
    with pytest.raises(CoverFails) as ei:
        dirichlet_cover(circ, sys, 1e-3, 0.15, 0.01, 2000)
    assert ei.value.report.uncovered_samples
    assert dirichlet_cover(circ, sys, 1e-3, 0.15, 0.01, 2000, strict=False).covered is False


def test_single_big_disc_covers_everything():
    c = trace_circle(quad_system(E=0.5), (1, 0, 0), 64)
    pts = c.resample(1000)
    assert cover_check(pts, [(pts[0], 10.0)]).all()
    assert not cover_check(pts, [(pts[0], 1e-3)]).all()


def test_covering_survives_smaller_eps():
    sys = quad_system(E=0.5)
    circ = trace_circle(sys, (1, 1, 1), 256)
    r1 = dirichlet_cover(circ, sys, 1e-2, 0.15, 1.0, 2000)
    n2 = int(2000 * 10 ** 0.15)
    r2 = dirichlet_cover(circ, sys, 1e-3, 0.15, 1.0, n2)
    assert r1.covered and r2.covered


def _dr(P_modes, k2, E=1.0):
    sys = quad_system(P_modes, E=E)
    drs = find_double_resonances(trace_circle(sys, (1, 0, 0), 64), sys, 1e-4, 0.15, 1.0, T_max=8)
    return sys, [d for d in drs if d.k_second == k2][0]


def test_classify_no_coupling_is_weak():
    sys, dr = _dr(modes(((1, 0, 0), "1")), (0, 1, -1))
    cl = classify(dr, sys)
    assert cl.strength == "weak" and cl.margin == math.inf


def test_classify_strong_coupling():
    sys, dr = _dr(modes(((1, 0, 0), "1"), ((0, 1, -1), "0.9")), (0, 1, -1))
    # grid oracle: coupling C^1 size 0.9, curvature of cos at its max 1
    cl = classify(dr, sys, theta=0.5)
    assert cl.strength == "strong"
    assert cl.coupling_c1 == pytest.approx(0.9, rel=1e-6)
    assert cl.d_P == pytest.approx(1.0, rel=1e-6)
    assert cl.margin == pytest.approx(0.5 / 0.9, rel=1e-6)


def test_classify_tail_mode_is_weak():
    k2 = (0, 8, -5)
    sys, dr = _dr(modes(((1, 0, 0), "1"), (k2, repr(13.0 ** -6))), k2)
    cl = classify(dr, sys)
    assert cl.strength == "weak"
    # in resonance coordinates the tail mode is cos x2, so its C^1 size is its amplitude
    assert cl.coupling_c1 == pytest.approx(13.0 ** -6, rel=1e-6)
    assert cl.margin > 1e5


def test_classify_degenerate_without_single_resonance_term():
    sys, dr = _dr(modes(((0, 1, -1), "1")), (0, 1, -1))
    with pytest.raises(DegenerateSingleResonance):
        classify(dr, sys)


@settings(max_examples=15)
@given(st.floats(1e-3, 1e3))
def test_classify_scale_invariant(lam):
    sys, dr = _dr(modes(((1, 0, 0), "1"), ((0, 1, -1), "0.2"), ((1, 1, -1), "0.1")), (0, 1, -1))
    a = classify(dr, sys)
    b = classify(dr, sys.with_P(sys.P.scale(lam)))
    assert a.strength == b.strength
    assert b.margin == pytest.approx(a.margin, rel=1e-9)
    assert b.d_P == pytest.approx(lam * a.d_P, rel=1e-9)
    assert b.coupling_c1 == pytest.approx(lam * a.coupling_c1, rel=1e-9)


def test_candidate_path_same_circle():
    sys = quad_system(E=0.5)
    cp = candidate_path(sys, (0, 1, 0), (0, 0, 1), 2, 0.05)
    assert cp.k_star == cp.k_target == (1, 0, 0)
    assert cp.intersection is None


def test_candidate_path_through_intersection():
    sys = quad_system(E=0.5)
    cp = candidate_path(sys, (0, 1, 0), (1, 0, 0), 2, 0.05)
    assert {cp.k_star, cp.k_target} == {(1, 0, 0), (0, 1, 0)}
    assert abs(abs(cp.intersection[2]) - 1) < 1e-10
    np.testing.assert_allclose(cp.intersection[:2], 0, atol=1e-10)
    np.testing.assert_allclose(cp.polyline[0], (0, 1, 0), atol=1e-12)
    np.testing.assert_allclose(cp.polyline[-1], (1, 0, 0), atol=1e-12)


def test_candidate_path_no_resonance_nearby():
    sys = quad_system(E=0.5)
    # about 0.17 away from every plane <k, p> = 0 with |k|_inf <= 1
    p = np.array([-0.42, 0.89, 0.175])
    p /= np.linalg.norm(p)
    with pytest.raises(NoResonanceWithinDelta):
        candidate_path(sys, p, (1, 0, 0), 1, 0.05)
