"""Resonance circles, double resonances, Dirichlet coverings, strength tags.

Frequencies are compared in the frame rotated by the unimodular completion of
k'.  There the circle of frequencies lies in the plane omega_1 = 0 and a
double resonance is a rational direction (0, -b, a) with (a, b) primitive;
its period is taken for the direction normalized to the boundary of the unit
square, i.e. T = max(|a|, |b|).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .errors import (CoverFails, DegenerateSingleResonance, NewtonDiverged, NoIntersection,
                     NoResonanceWithinDelta, StallDetected)
from .lattice import (dirichlet_approx, irreducible_vectors, primitive_pairs,
                      totally_irreducible, unimodular_complete)
from .model import NearlyIntegrableSystem, convexity_bounds

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# circles


def _constraints(h, k, E, X):
    g = h.grad(X)
    Hk = h.hess(X) @ k
    F = np.stack([h.value(X) - E, g @ k], axis=-1)
    J = np.stack([g, Hk], axis=-2)  # (..., 2, 3)
    return F, J


def project_to_circle(h, k, E, X, tol=1e-13, max_iter=50):
    """Min-norm Newton onto {h = E, <k, grad h> = 0}, vectorized over rows."""
    k = np.asarray(k, dtype=float)
    X = np.array(X, dtype=float, copy=True)
    for _ in range(max_iter):
        F, J = _constraints(h, k, E, X)
        if np.max(np.abs(F), initial=0.0) < tol:
            return X
        JJt = J @ np.swapaxes(J, -1, -2)
        step = np.linalg.solve(JJt, F[..., None])[..., 0]
        X = X - np.einsum("...ji,...j->...i", J, step)
    F, _ = _constraints(h, k, E, X)
    if np.max(np.abs(F), initial=0.0) > 1e3 * tol:
        raise NewtonDiverged("projection onto the resonance circle failed", X)
    return X


@dataclass
class ResonanceCircle:
    k: tuple
    E: float
    samples: np.ndarray  # (n, 3), distinct, ordered
    h: object = field(repr=False, default=None)

    @property
    def loop(self) -> np.ndarray:
        return np.vstack([self.samples, self.samples[:1]])

    @property
    def arc(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.loop, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def residuals(self):
        F, _ = _constraints(self.h, np.asarray(self.k, float), self.E, self.samples)
        return np.abs(F[:, 0]).max(), np.abs(F[:, 1]).max()

    def resample(self, n: int) -> np.ndarray:
        """n points equally spaced in arc length, projected onto the circle."""
        s = np.linspace(0.0, self.length, n, endpoint=False)
        arc, loop = self.arc, self.loop
        X = np.stack([np.interp(s, arc, loop[:, i]) for i in range(3)], axis=1)
        return project_to_circle(self.h, np.asarray(self.k, float), self.E, X)

    def to_json(self):
        return {"k": list(self.k), "E": self.E, "samples": self.samples.tolist()}


def _start_point(sys: NearlyIntegrableSystem, k):
    h, E = sys.h, sys.E
    p0 = h.argmin()
    if E <= float(h.value(p0)):
        raise NoIntersection("energy level is empty")
    Hk = h.hess(p0) @ k
    # a direction orthogonal to H k, preferring a coordinate axis for determinism
    basis = np.eye(3)
    d = basis[int(np.argmin(np.abs(Hk)))]
    d = d - (d @ Hk) / (Hk @ Hk) * Hk
    d /= np.linalg.norm(d)
    x = sys.level_point(d)
    try:
        x = project_to_circle(h, k, E, x[None, :])[0]
    except NewtonDiverged as exc:
        raise NoIntersection(f"no point of Gamma_k near the ray start: {exc}") from exc
    if np.linalg.norm(x) > h.domain_radius:
        raise NoIntersection("resonance circle leaves the domain ball")
    return x


def trace_circle(sys: NearlyIntegrableSystem, k: Sequence[int], n_samples: int = 256,
                 tol: float = 1e-12) -> ResonanceCircle:
    """Predictor-corrector continuation of Gamma_k = {h = E, <k, grad h> = 0}."""
    k_int = tuple(int(x) for x in k)
    if not totally_irreducible(k_int):
        raise ValueError(f"{k_int} is not totally irreducible")
    h, E = sys.h, sys.E
    kv = np.asarray(k_int, dtype=float)
    x0 = _start_point(sys, kv)

    def tangent(x):
        t = np.cross(h.grad(x), h.hess(x) @ kv)
        return t / np.linalg.norm(t)

    t0 = tangent(x0)
    radius = np.linalg.norm(x0 - h.argmin())
    s_max = 2 * np.pi * radius / (2.0 * n_samples)
    s = s_max
    pts = [x0]
    x, t_prev = x0, t0
    travelled = 0.0
    steps = 0
    while True:
        steps += 1
        if steps > 10 * n_samples:
            raise StallDetected(f"continuation of Gamma_{k_int} did not close in {10 * n_samples} steps")
        pred = x + s * t_prev
        try:
            y = project_to_circle(h, kv, E, pred[None, :], tol=tol, max_iter=8)[0]
        except NewtonDiverged:
            s *= 0.5
            if s < 1e-8 * s_max:
                raise StallDetected("step size collapsed during continuation")
            continue
        if np.linalg.norm(y - x) > 2.0 * s:
            s *= 0.5
            continue
        t_new = tangent(y)
        if t_new @ t_prev < 0:
            t_new = -t_new
        travelled += np.linalg.norm(y - x)
        # closing: we have gone past the start along its tangent
        if travelled > 4 * s_max and np.linalg.norm(y - x0) < 1.5 * s_max:
            before = (x - x0) @ t0
            after = (y - x0) @ t0
            if before < 0 <= after:
                break
        pts.append(y)
        x, t_prev = y, t_new
        s = min(s * 1.2, s_max)
    dense = np.array(pts)
    circ = ResonanceCircle(k_int, float(E), dense, h)
    circ.samples = circ.resample(n_samples)
    # a second pass evens out spacing after projection
    circ.samples = circ.resample(n_samples)
    return circ


def ellipse_perimeter_oracle(Q, k, E, n=1_000_000) -> float:
    """Perimeter of the quadratic resonance circle by a dense polygon."""
    Q = np.asarray(Q, float)
    nrm = Q @ np.asarray(k, float)
    # orthonormal basis of the plane nrm . p = 0
    _, _, vt = np.linalg.svd(nrm[None, :])
    B = vt[1:].T
    Q2 = B.T @ Q @ B
    w, U = np.linalg.eigh(Q2)
    th = np.linspace(0, 2 * np.pi, n + 1)
    a = np.sqrt(2 * E / w)
    pts = (U @ np.stack([a[0] * np.cos(th), a[1] * np.sin(th)])).T @ B.T
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


# ---------------------------------------------------------------------------
# double resonances


@dataclass
class Classification:
    strength: str
    margin: float
    coupling_c1: float
    d_P: float
    theta: float

    def to_json(self):
        return {"strength": self.strength, "margin": _finite(self.margin),
                "coupling_c1": self.coupling_c1, "d_P": self.d_P, "theta": self.theta}


def _finite(x):
    return x if math.isfinite(x) else "inf"


@dataclass
class DoubleResonance:
    p_dd: np.ndarray
    k_prime: tuple
    k_second: tuple
    kbar_second: tuple  # (0, a, b) in the rotated frame
    T: int
    omega: np.ndarray
    disc_radius: float
    eps: float
    kappa: float
    strength: Optional[str] = None
    classification: Optional[Classification] = None

    @property
    def margin(self):
        return None if self.classification is None else self.classification.margin

    def normalized_rotated_frequency(self):
        """(0, -b, a)/T as exact rationals: the sup-normalized rotated frequency."""
        a, b = self.kbar_second[1], self.kbar_second[2]
        sgn = 1 if (self.direction_sign > 0) else -1
        return (Fraction(0), Fraction(-sgn * b, self.T), Fraction(sgn * a, self.T))

    @property
    def direction_sign(self) -> int:
        M0 = np.array(unimodular_complete(self.k_prime).M0, dtype=float)
        wb = M0 @ self.omega
        a, b = self.kbar_second[1], self.kbar_second[2]
        return 1 if wb @ np.array([0.0, -b, a]) > 0 else -1

    def to_json(self):
        return {
            "p": [float(x) for x in self.p_dd],
            "k1": list(self.k_prime),
            "k2": list(self.k_second),
            "kbar2": list(self.kbar_second),
            "T": self.T,
            "omega": [float(x) for x in self.omega],
            "radius": self.disc_radius,
            "strength": self.strength,
            "margin": None if self.margin is None else _finite(self.margin),
        }


def period_bound(eps: float, kappa: float, K_star: float) -> float:
    return K_star * eps ** (-(1.0 - 3.0 * kappa) / 3.0)


def solve_frequency_point(h, E, d, tol=1e-13, max_iter=50):
    """p with grad h(p) = lam d, lam > 0, h(p) = E."""
    d = np.asarray(d, float)
    p0 = h.argmin()
    H0 = h.hess(p0)
    Hinv_d = np.linalg.solve(H0, d)
    lam = math.sqrt(max(2.0 * (E - float(h.value(p0))), 0.0) / float(d @ Hinv_d))
    p = p0 + lam * Hinv_d
    for _ in range(max_iter):
        F = np.concatenate([h.grad(p) - lam * d, [float(h.value(p)) - E]])
        if np.abs(F).max() < tol:
            return p, lam
        J = np.zeros((4, 4))
        J[:3, :3] = h.hess(p)
        J[:3, 3] = -d
        J[3, :3] = h.grad(p)
        delta = np.linalg.solve(J, -F)
        p = p + delta[:3]
        lam = lam + delta[3]
    F = np.concatenate([h.grad(p) - lam * d, [float(h.value(p)) - E]])
    if np.abs(F).max() > 1e-10 or lam <= 0:
        raise NewtonDiverged("frequency point Newton failed", p)
    return p, lam


def find_double_resonances(circle: ResonanceCircle, sys: NearlyIntegrableSystem, eps: float,
                           kappa: float, K_star: float, T_max: Optional[int] = None,
                           warnings: Optional[list] = None) -> List[DoubleResonance]:
    if not (0.0 < kappa < 1.0 / 6.0):
        raise ValueError("kappa must lie in (0, 1/6)")
    if T_max is None:
        T_max = int(math.floor(period_bound(eps, kappa, K_star) + 1e-12))
    tri = unimodular_complete(circle.k)
    M0 = np.array(tri.M0, dtype=float)
    M0t = np.array(tri.M0_t, dtype=int)
    out: List[DoubleResonance] = []
    for a, b in primitive_pairs(T_max):
        kbar = (0, a, b)
        k2 = tuple(int(x) for x in M0t @ np.array(kbar))
        T = max(abs(a), abs(b))
        for sgn in (1, -1):
            dbar = sgn * np.array([0.0, -b, a]) / T
            d = np.linalg.solve(M0, dbar)
            try:
                p, _ = solve_frequency_point(sys.h, sys.E, d)
            except (NewtonDiverged, np.linalg.LinAlgError) as exc:
                if warnings is not None:
                    warnings.append(f"{kbar} sign {sgn}: {exc}")
                continue
            if np.linalg.norm(p) > sys.h.domain_radius:
                if warnings is not None:
                    warnings.append(f"{kbar} sign {sgn}: outside domain")
                continue
            out.append(DoubleResonance(p, tuple(circle.k), k2, kbar, T, sys.h.grad(p),
                                       eps ** kappa / T, eps, kappa))
    # dedupe (a point can only appear once, but guard numerically) and sort
    uniq: List[DoubleResonance] = []
    for dr in sorted(out, key=lambda r: (r.T, r.k_second, tuple(np.round(r.p_dd, 12)))):
        if all(np.linalg.norm(dr.p_dd - u.p_dd) > 1e-8 for u in uniq):
            uniq.append(dr)
    return uniq


# ---------------------------------------------------------------------------
# covering


@dataclass
class CoveringReport:
    discs: list
    uncovered_samples: list
    max_period: int
    n_check: int = 0
    d_empirical: float = float("nan")
    Lambda: float = float("nan")
    m: float = float("nan")
    eps0: float = float("nan")
    eps_within_eps0: Optional[bool] = None
    dirichlet_max_witness: int = 0
    eps_history: list = field(default_factory=list)

    @property
    def covered(self) -> bool:
        return len(self.uncovered_samples) == 0

    def to_json(self):
        return {
            "discs": [{"center": [float(x) for x in c], "radius": float(r)} for c, r in self.discs],
            "uncovered": [[float(x) for x in p] for p in self.uncovered_samples],
            "max_period": self.max_period,
            "n_check": self.n_check,
            "d": self.d_empirical,
            "Lambda": self.Lambda,
            "m": self.m,
            "eps0": self.eps0,
            "eps_within_eps0": self.eps_within_eps0,
            "dirichlet_max_witness": self.dirichlet_max_witness,
            "eps_history": self.eps_history,
        }


def cover_check(points, discs):
    """Boolean mask of points lying in at least one closed disc."""
    points = np.asarray(points, float)
    if not discs:
        return np.zeros(len(points), bool)
    C = np.array([c for c, _ in discs])
    R = np.array([r for _, r in discs])
    ok = np.zeros(len(points), bool)
    for s in range(0, len(points), 4096):
        D = np.linalg.norm(points[s:s + 4096, None, :] - C[None], axis=-1)
        ok[s:s + 4096] = np.any(D <= R[None] * (1 + 1e-12), axis=1)
    return ok


def _rotated_unit_square(M0, omega):
    wb = omega @ M0.T
    lam = 1.0 / np.max(np.abs(wb[:, 1:]), axis=1)
    return wb * lam[:, None], lam


def dirichlet_cover(circle: ResonanceCircle, sys: NearlyIntegrableSystem, eps: float,
                    kappa: float, K_star: float, n_check: int = 10_000,
                    strict: bool = True) -> CoveringReport:
    drs = find_double_resonances(circle, sys, eps, kappa, K_star)
    discs = [(dr.p_dd, dr.disc_radius) for dr in drs]
    pts = circle.resample(n_check)
    ok = cover_check(pts, discs)
    M0 = np.array(unimodular_complete(circle.k).M0, float)
    omega = sys.h.grad(pts)
    unit, lam = _rotated_unit_square(M0, omega)
    # empirical d from neighbouring sample pairs
    nxt = np.roll(np.arange(n_check), -1)
    num = np.linalg.norm(omega - omega[nxt], axis=1)
    den = np.linalg.norm(unit - unit[nxt], axis=1)
    d_emp = float(np.max(num / np.maximum(den, 1e-300)))
    Lam = float(lam.max())
    m, _ = convexity_bounds(sys.h, radius=np.linalg.norm(pts, axis=1).max())
    expo = (1 - 3 * kappa) / 3 - kappa
    eps0 = (m * K_star / (d_emp * Lam ** 2)) ** (1.0 / expo)
    T_max = max((dr.T for dr in drs), default=0)
    # Dirichlet witnesses along the square side of each sample
    K_dir = period_bound(eps, kappa, K_star) + 1.0
    wit = 0
    for u in unit[:: max(1, n_check // 512)]:
        x = u[2] if abs(u[1]) >= abs(u[2]) else u[1]
        wit = max(wit, dirichlet_approx(abs(float(x)) % 1.0, K_dir))
    rep = CoveringReport(discs, [p for p, o in zip(pts, ok) if not o], T_max, n_check, d_emp, Lam,
                         m, float(eps0), bool(eps <= eps0), int(wit), [eps])
    if strict and not rep.covered:
        raise CoverFails(rep)
    return rep


def cover_with_halving(circle, sys, eps, kappa, K_star, n_check=10_000, max_halvings=8):
    """Halve eps until the covering verifies; the history is kept in the report."""
    history = []
    for _ in range(max_halvings + 1):
        rep = dirichlet_cover(circle, sys, eps, kappa, K_star, n_check, strict=False)
        history.append(eps)
        if rep.covered:
            rep.eps_history = history
            return rep
        eps *= 0.5
    rep.eps_history = history
    raise CoverFails(rep)


# ---------------------------------------------------------------------------
# strong / weak


def _resonant_decomposition(P, p, k1, k2):
    """Coefficients c_{j,l} of P(p, .) on modes j k1 + l k2."""
    A = np.array([k1, k2], float).T  # 3x2
    terms = {}
    if len(P) == 0:
        return terms
    c = P.coeffs(p)
    for lab, val in zip(P.labels, c):
        sol, *_ = np.linalg.lstsq(A, lab.astype(float), rcond=None)
        if np.allclose(A @ sol, lab, atol=1e-9) and np.allclose(sol, np.rint(sol), atol=1e-9):
            j, l = (int(round(x)) for x in sol)
            terms[(j, l)] = terms.get((j, l), 0) + complex(val)
    return terms


def single_resonance_curvature(terms, n_grid=512):
    """(argmax, value, |Z''| there) of Z(x) = sum_j c_{j,0} e^{ijx}."""
    js = np.array([j for (j, l) in terms if l == 0], float)
    cs = np.array([terms[(int(j), 0)] for j in js], complex)
    if len(js) == 0:
        return 0.0, 0.0, 0.0
    Z = lambda x: float(np.real(np.sum(cs * np.exp(1j * js * x))))
    x = np.linspace(0, 2 * np.pi, n_grid, endpoint=False)
    vals = np.real(np.exp(1j * np.outer(x, js)) @ cs)
    i = int(np.argmax(vals))
    from scipy.optimize import minimize_scalar
    h = 2 * np.pi / n_grid
    res = minimize_scalar(lambda t: -Z(t), bounds=(x[i] - h, x[i] + h), method="bounded",
                          options={"xatol": 1e-12})
    xs = float(res.x) % (2 * np.pi)
    curv = abs(float(np.real(np.sum(-(js ** 2) * cs * np.exp(1j * js * xs)))))
    return xs, Z(xs), curv


def classify(dr: DoubleResonance, sys: NearlyIntegrableSystem, theta: float = 0.25,
             n_grid: int = 128, curvature_tol: float = 1e-9) -> Classification:
    terms = _resonant_decomposition(sys.P, dr.p_dd, dr.k_prime, dr.k_second)
    _, _, d_P = single_resonance_curvature(terms)
    if d_P < curvature_tol:
        raise DegenerateSingleResonance(
            f"single-resonance potential along {dr.k_prime} has curvature {d_P:.3g} at its max")
    coup = {jl: c for jl, c in terms.items() if jl[1] != 0}
    if coup:
        jl = np.array(list(coup.keys()), float)
        cs = np.array(list(coup.values()), complex)
        x = np.linspace(0, 2 * np.pi, n_grid, endpoint=False)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        ph = np.exp(1j * (X1[..., None] * jl[:, 0] + X2[..., None] * jl[:, 1]))
        v = np.abs(np.real(ph @ cs)).max()
        d1 = np.abs(np.real(ph @ (1j * jl[:, 0] * cs))).max()
        d2 = np.abs(np.real(ph @ (1j * jl[:, 1] * cs))).max()
        size = float(max(v, d1, d2))
    else:
        size = 0.0
    margin = float("inf") if size == 0 else theta * d_P / size
    strength = "weak" if size < theta * d_P else "strong"
    cl = Classification(strength, margin, size, float(d_P), theta)
    dr.classification = cl
    dr.strength = strength
    return cl


# ---------------------------------------------------------------------------
# candidate path


@dataclass
class CandidatePath:
    k_star: tuple
    k_target: tuple
    circles: list
    polyline: np.ndarray
    intersection: Optional[np.ndarray]
    distances: tuple

    def to_json(self):
        return {
            "k_star": list(self.k_star),
            "k_target": list(self.k_target),
            "intersection": None if self.intersection is None else self.intersection.tolist(),
            "distances": list(self.distances),
            "polyline": self.polyline.tolist(),
        }


def _nearest_resonance(sys, p, K_search, n_project=6):
    h = sys.h
    g, H = h.grad(p), h.hess(p)
    cands = irreducible_vectors(K_search) if K_search >= 1 else []
    if not cands:
        return None, float("inf"), None
    ks = np.array(cands, float)
    proxy = np.abs(ks @ g) / np.linalg.norm(ks @ H, axis=1)
    order = np.lexsort((np.arange(len(cands)), np.round(proxy, 12)))[:n_project]
    best = None
    for i in order:
        k = np.array(cands[i], float)
        try:
            x = project_to_circle(h, k, sys.E, p[None, :])[0]
        except NewtonDiverged:
            continue
        dist = float(np.linalg.norm(x - p))
        key = (round(dist, 10), int(k @ k), tuple(-int(v) for v in cands[i]))
        if best is None or key < best[0]:
            best = (key, cands[i], dist, x)
    if best is None:
        return None, float("inf"), None
    return best[1], best[2], best[3]


def _arc_between(circle: ResonanceCircle, a, b):
    S = circle.samples
    n = len(S)
    ia = int(np.argmin(np.linalg.norm(S - a, axis=1)))
    ib = int(np.argmin(np.linalg.norm(S - b, axis=1)))
    fwd = [(ia + j) % n for j in range(((ib - ia) % n) + 1)]
    bwd = [(ia - j) % n for j in range(((ia - ib) % n) + 1)]
    idx = fwd if len(fwd) <= len(bwd) else bwd
    return np.vstack([a, S[idx[1:-1]], b]) if len(idx) > 1 else np.vstack([a, b])


def candidate_path(sys: NearlyIntegrableSystem, p_star, p_target, K_search: int,
                   delta: float, n_samples: int = 256) -> CandidatePath:
    p_star = np.asarray(p_star, float)
    p_target = np.asarray(p_target, float)
    k1, d1, x1 = _nearest_resonance(sys, p_star, K_search)
    k2, d2, x2 = _nearest_resonance(sys, p_target, K_search)
    worst = max(d1, d2)
    if k1 is None or k2 is None or worst > delta / 2:
        raise NoResonanceWithinDelta(
            f"closest resonance circle is at distance {worst:.4g} > delta/2 = {delta / 2:.4g}")
    c1 = trace_circle(sys, k1, n_samples)
    if k1 == k2:
        poly = _arc_between(c1, x1, x2)
        return CandidatePath(k1, k2, [c1], poly, None, (d1, d2))
    c2 = trace_circle(sys, k2, n_samples)
    direction = np.cross(np.array(k1, float), np.array(k2, float))
    best = None
    for sgn in (1, -1):
        X, _ = solve_frequency_point(sys.h, sys.E, sgn * direction)
        a = _arc_between(c1, x1, X)
        b = _arc_between(c2, X, x2)
        poly = np.vstack([a, b[1:]])
        L = float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())
        key = (round(L, 10), tuple(np.round(X, 12)))
        if best is None or key < best[0]:
            best = (key, poly, X)
    return CandidatePath(k1, k2, [c1, c2], best[1], best[2], (d1, d2))
