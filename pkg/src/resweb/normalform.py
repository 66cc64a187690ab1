"""Reduction of H near a double resonance to a planar mechanical system.

Frames, in order of application to the original (p, q):

* rotation by the unimodular completion M0 of k':  p = M0^T pbar, qbar = M0 q;
* the near-identity map Phi, the time-1 flow of -eps F where F solves the
  homological equation, which removes the non-resonant part of P to first order;
* the shear M and a coordinate swap Pm that puts the surviving frequency in
  the third slot:  p = Lp v, q = Lq u with Lp = M0^T M^T Pm, Lq = Lp^{-T};
* the scaling  v = v'' + (sqrt(eps) y, eps I / omega3),  u = (x1, x2, omega3 theta / sqrt(eps)).

On the energy level the Hamiltonian becomes  -I = G_eps(x, y, theta)  with
G_eps = <By,y>/2 - V(x) + remainders.  All remainders are evaluated through
difference formulas so that small eps loses no digits to cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import DomainEmpty, NewtonDiverged, ResonantDivision
from .lattice import inverse, matmul, matvec, shear_transform, transpose, unimodular_complete
from .model import FourierPerturbation, NearlyIntegrableSystem, sup_norms
from .resonance import DoubleResonance
from .torus import TorusPotential

TWO_PI = 2.0 * np.pi


def _to_float(m):
    return np.array([[float(x) for x in row] for row in m])


def _frac_json(m):
    return [[str(Fraction(x)) for x in row] for row in m]


# ---------------------------------------------------------------------------
# averaging and the homological equation


def resonant_mask(P: FourierPerturbation, dr: DoubleResonance, rtol: float = 1e-9) -> np.ndarray:
    """Modes with <k, omega> = 0, decided twice: numerically and by lattice membership."""
    omega = np.asarray(dr.omega, float)
    labels = P.labels
    num = np.abs(labels @ omega) <= rtol * np.maximum(np.linalg.norm(labels, axis=1), 1) * np.linalg.norm(omega)
    tri = unimodular_complete(dr.k_prime)
    inv_t = transpose(inverse(tri.M0))  # kbar = M0^{-T} k
    _, a, b = dr.kbar_second
    exact = np.zeros(len(labels), bool)
    for i, k in enumerate(labels.tolist()):
        kb = matvec(inv_t, [Fraction(x) for x in k])
        exact[i] = kb[1] * b - kb[2] * a == 0
    if not np.array_equal(num, exact):
        raise ResonantDivision("numerical and lattice resonance filters disagree")
    return exact


def _rotation(dr):
    tri = unimodular_complete(dr.k_prime)
    M0 = _to_float(tri.M0)
    return tri, M0, np.linalg.inv(M0)


def resonant_average(sys: NearlyIntegrableSystem, dr: DoubleResonance) -> FourierPerturbation:
    """Resonant part Z of P, returned in the rotated frame."""
    _, _, M0inv = _rotation(dr)
    return sys.P.subset(resonant_mask(sys.P, dr)).transform(M0inv)


def _homological_original(P: FourierPerturbation, dr: DoubleResonance) -> FourierPerturbation:
    mask = ~resonant_mask(P, dr)
    sub = P.subset(mask)
    den = sub.labels @ np.asarray(dr.omega, float)
    if np.any(den == 0):
        raise ResonantDivision("zero divisor on a mode declared non-resonant")
    return sub.copy_with(C=1j * sub.C / den[:, None])


def homological_solve(sys: NearlyIntegrableSystem, dr: DoubleResonance) -> FourierPerturbation:
    """F with <omega, dF/dq> + P - Z = 0, returned in the rotated frame."""
    _, _, M0inv = _rotation(dr)
    return _homological_original(sys.P, dr).transform(M0inv)


def homological_residual(sys, dr, n: int = 1000, seed: int = 0, radius: Optional[float] = None) -> float:
    """max |<omegabar, d F/d qbar> + Pbar - Z| at random points of the rotated frame."""
    _, M0, M0inv = _rotation(dr)
    F = homological_solve(sys, dr)
    Z = resonant_average(sys, dr)
    Pb = sys.P.transform(M0inv)
    wb = M0 @ np.asarray(dr.omega, float)
    rng = np.random.default_rng(seed)
    R = sys.h.domain_radius if radius is None else radius
    p = rng.uniform(-1, 1, (n, 3)) * R / math.sqrt(3)
    q = rng.uniform(0, TWO_PI, (n, 3))
    res = F.grad_q(p, q) @ wb + Pb.value(p, q) - Z.value(p, q)
    return float(np.abs(res).max(initial=0.0))


def _omega_scale(dr) -> float:
    _, M0, _ = _rotation(dr)
    return float(np.max(np.abs((M0 @ np.asarray(dr.omega, float))[1:])))


def flow_period(dr: DoubleResonance) -> float:
    """Period of t -> q + omega t on the torus."""
    return TWO_PI * dr.T / _omega_scale(dr)


def homological_bound_check(sys, dr, radius=None):
    """(sup |F|, T * sup |Pbar|) on a grid, T the period of omega / |omegabar|_inf."""
    R = sys.h.domain_radius if radius is None else radius
    F = homological_solve(sys, dr)
    _, _, M0inv = _rotation(dr)
    supF = sup_norms(F, R, 0)
    supP = sup_norms(sys.P.transform(M0inv), R, 0)
    return supF, dr.T / _omega_scale(dr) * supP


def time_integral_check(sys, dr, n_pts: int = 16, n_t: int = 4096, seed: int = 1) -> float:
    """Compare F with -(1/T) int_0^T (Pbar - Z)(q + omega t) t dt at a few points."""
    _, M0, M0inv = _rotation(dr)
    F = homological_solve(sys, dr)
    Pb = sys.P.transform(M0inv)
    Z = resonant_average(sys, dr)
    wb = M0 @ np.asarray(dr.omega, float)
    T = flow_period(dr)
    rng = np.random.default_rng(seed)
    p = rng.uniform(-0.5, 0.5, (n_pts, 3))
    q = rng.uniform(0, TWO_PI, (n_pts, 3))
    t = (np.arange(n_t) + 0.5) * T / n_t
    qq = q[:, None, :] + t[None, :, None] * wb
    pp = np.broadcast_to(p[:, None, :], qq.shape)
    integrand = (Pb.value(pp, qq) - Z.value(pp, qq)) * t
    approx = -integrand.sum(axis=1) * (T / n_t) / T
    return float(np.abs(approx - F.value(p, q)).max())


# ---------------------------------------------------------------------------
# transform chain


@dataclass
class TransformChain:
    M0: object
    shear: object
    Pm: np.ndarray
    Lp_exact: tuple
    v_dd: np.ndarray
    omega3: float
    eps: float
    kappa: float
    eta: float
    F: FourierPerturbation  # rotated frame
    T: int
    # derived quantities in the (v, u) frame
    Lp: np.ndarray = field(repr=False, default=None)
    Lq: np.ndarray = field(repr=False, default=None)
    h_v: object = field(repr=False, default=None)
    P_v: FourierPerturbation = field(repr=False, default=None)
    Z_v: FourierPerturbation = field(repr=False, default=None)
    F_v: FourierPerturbation = field(repr=False, default=None)
    Btilde: np.ndarray = field(repr=False, default=None)
    s: float = 0.0
    kpp_abs: int = 1
    V: TorusPotential = field(repr=False, default=None)
    n_flow: int = 8
    sym_shift: np.ndarray = field(repr=False, default=None)

    # scaling ---------------------------------------------------------------
    @property
    def sqeps(self):
        return math.sqrt(self.eps)

    def delta(self, y, I):
        y = np.asarray(y, float)
        I = np.asarray(I, float)
        return np.concatenate([self.sqeps * y, (self.eps * I / self.omega3)[..., None]], axis=-1)

    def u_of(self, x, theta):
        x = np.asarray(x, float)
        th = np.asarray(theta, float)
        return np.concatenate([x, (self.omega3 * th / self.sqeps)[..., None]], axis=-1)

    def scaled_to_vu(self, x, y, I, theta):
        return self.v_dd + self.delta(y, I), self.u_of(x, theta)

    def vu_to_scaled(self, v, u):
        d = np.asarray(v, float) - self.v_dd
        y = d[..., :2] / self.sqeps
        I = d[..., 2] * self.omega3 / self.eps
        theta = np.asarray(u, float)[..., 2] * self.sqeps / self.omega3
        return np.asarray(u, float)[..., :2], y, I, theta

    # near-identity map -----------------------------------------------------
    def flow_displacement(self, v, u, direction: int = 1):
        """(dv, du) of the time-1 flow of -eps F (direction=-1: its inverse)."""
        v = np.asarray(v, float)
        u = np.asarray(u, float)
        dv = np.zeros(np.broadcast_shapes(v.shape, u.shape))
        du = np.zeros_like(dv)
        if self.F_v is None or self.F_v.is_empty or self.eps == 0:
            return dv, du
        h = direction / self.n_flow
        e = self.eps

        def rhs(a, b):
            return e * self.F_v.grad_q(a, b), -e * self.F_v.grad_p(a, b)

        for _ in range(self.n_flow):
            k1v, k1u = rhs(v + dv, u + du)
            k2v, k2u = rhs(v + dv + 0.5 * h * k1v, u + du + 0.5 * h * k1u)
            k3v, k3u = rhs(v + dv + 0.5 * h * k2v, u + du + 0.5 * h * k2u)
            k4v, k4u = rhs(v + dv + h * k3v, u + du + h * k3u)
            dv = dv + h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
            du = du + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
        return dv, du

    def to_original(self, x, y, I, theta):
        v, u = self.scaled_to_vu(x, y, I, theta)
        dv, du = self.flow_displacement(v, u, +1)
        return (v + dv) @ self.Lp.T, (u + du) @ self.Lq.T

    def from_original(self, p, q):
        vs = np.asarray(p, float) @ np.linalg.inv(self.Lp).T
        us = np.asarray(q, float) @ self.Lp  # u = Lp^T q
        dv, du = self.flow_displacement(vs, us, -1)
        return self.vu_to_scaled(vs + dv, us + du)

    def roundtrip_error(self, n: int = 200, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        r = self.y_radius()
        x = rng.uniform(0, TWO_PI, (n, 2))
        y = rng.uniform(-1, 1, (n, 2)) * r / 2
        I = rng.uniform(-1, 1, n) * max(r * r, 1.0)
        th = rng.uniform(0, TWO_PI * self.T, n) * self.sqeps / self.omega3
        p, q = self.to_original(x, y, I, th)
        x2, y2, I2, th2 = self.from_original(p, q)
        errs = [np.abs(x2 - x).max(), np.abs(y2 - y).max() * self.sqeps,
                np.abs(I2 - I).max() * self.eps, np.abs(th2 - th).max() / self.sqeps]
        return float(max(errs))

    # reduced Hamiltonian ---------------------------------------------------
    def y_radius(self, delta_prime: float = 0.0) -> float:
        return (1 - delta_prime) / (self.eta * self.T) * self.eps ** (self.kappa - 0.5)

    @property
    def B(self):
        return self.Btilde[:2, :2]

    @property
    def B_prime(self):
        return self.Btilde[:2, 2]

    @property
    def B_dprime(self):
        return float(self.Btilde[2, 2])

    def V_x(self, x):
        x = np.asarray(x, float)
        phi = np.stack([x[..., 0], self.kpp_abs * x[..., 1]], axis=-1)
        return self.V.value(phi)

    def quadratic_coeffs(self, x, y):
        y = np.asarray(y, float)
        a = self.eps * self.B_dprime / (2 * self.omega3 ** 2)
        b = 1 + self.sqeps / self.omega3 * (y @ self.B_prime)
        c = 0.5 * np.einsum("...i,ij,...j->...", y, self.B, y) - self.V_x(x)
        return a, b, c

    def G0(self, x, y, theta=None):
        a, b, c = self.quadratic_coeffs(x, y)
        disc = b * b - 4 * a * c
        if np.any(disc < 0) or np.any(b <= 0):
            raise DomainEmpty("quadratic energy relation has no admissible root")
        return 2 * c / (b + np.sqrt(disc))

    def G0_textbook(self, x, y, theta=None):
        a, b, c = self.quadratic_coeffs(x, y)
        return (b - np.sqrt(b * b - 4 * a * c)) / (2 * a)

    def pieces(self, x, y, I, theta):
        """Split of G_tilde into its main part and the four remainders."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        I = np.asarray(I, float)
        d = self.delta(y, I)
        v = self.v_dd + d
        u = self.u_of(x, theta)
        e = self.eps
        dv, du = self.flow_displacement(v, u, +1)
        hd1 = self.h_v.difference(self.v_dd, d) / e
        hd2 = self.h_v.difference(v, dv) / e
        pstar = self.P_v.value(v + dv, u + du)
        z_dd = self.Z_v.value(self.v_dd, u)
        R1 = self.Z_v.value_difference(self.v_dd, d, u)
        dgrad = self.h_v.grad(v) - self.h_v.grad(self.v_dd)
        R2 = np.einsum("...i,...i->...", dgrad, self.F_v.grad_q(v, u)) if not self.F_v.is_empty \
            else np.zeros_like(hd1)
        R3 = hd2 + pstar - (z_dd + R1) - R2
        Rh = self.h_v.taylor_tail(self.v_dd, d) / e
        a, b, c = self.quadratic_coeffs(x, y)
        main = a * I * I + b * I + c
        total = hd1 + hd2 + pstar + self.s
        return {"main": main, "R1": R1, "R2": R2, "R3": R3, "Rh": Rh, "total": total}

    def G_tilde(self, x, y, I, theta):
        return self.pieces(x, y, I, theta)["total"]

    def G_eps(self, x, y, theta, tol: float = 1e-11, max_iter: int = 40):
        """Solve G_tilde(x, y, -G, theta) = 0 for G, seeded at G0.  The
        tolerance is relative to max(1, |G|): G_tilde divides differences of
        h by eps, so its roundoff grows with |G|."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        theta = np.asarray(theta, float)
        G = np.array(self.G0(x, y), dtype=float, copy=True)
        a, b, _ = self.quadratic_coeffs(x, y)
        f = self.G_tilde(x, y, -G, theta)
        fp = -(b - 2 * a * G)  # d/dG of the main part; secant-corrected below
        for _ in range(max_iter):
            lim = tol * np.maximum(1.0, np.abs(G))
            if np.all(np.abs(f) < lim):
                return G
            Gn = G - f / fp
            fn = self.G_tilde(x, y, -Gn, theta)
            dG = Gn - G
            ok = np.abs(dG) > 1e-14 * np.maximum(1.0, np.abs(G))
            sec = np.where(ok, (fn - f) / np.where(ok, dG, 1.0), fp)
            better = np.abs(fn) <= np.abs(f)
            fp = np.where(better & ok & (np.abs(sec) > 0.5 * np.abs(fp)), sec, fp)
            G = np.where(better, Gn, G)
            f = np.where(better, fn, f)
            fp = np.where(better, fp, 2.0 * fp)
        lim = tol * np.maximum(1.0, np.abs(G))
        if np.any(np.abs(f) >= lim):
            i = int(np.argmax(np.abs(f) / lim))
            raise NewtonDiverged(f"G_eps Newton residual {np.abs(f).max():.3g}",
                                 (x.reshape(-1, 2)[i % max(1, x.reshape(-1, 2).shape[0])].tolist(),))
        return G

    def to_json(self):
        return {
            "M0_t": [list(r) for r in self.M0.M0_t],
            "shear_M_t": _frac_json(self.shear.M_t),
            "shear_branch": self.shear.branch,
            "Pm": self.Pm.astype(int).tolist(),
            "Lp": _frac_json(self.Lp_exact),
            "v_dd": [float(x) for x in self.v_dd],
            "omega3": self.omega3,
            "eps": self.eps,
            "kappa": self.kappa,
            "eta": self.eta,
            "T": self.T,
            "shift_s": self.s,
            "symmetry_shift": [float(x) for x in self.sym_shift],
            "F": self.F.to_json(),
        }


# ---------------------------------------------------------------------------
# normal form and remainders


@dataclass
class RemainderReport:
    eps: list
    norms: dict  # name -> list of sup norms, one per eps
    slopes: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    exact_zero: dict = field(default_factory=dict)
    G_diff_constant: float = float("nan")
    G_diff_fit_residual: float = float("nan")
    kappa: float = float("nan")
    dG_x1: list = field(default_factory=list)
    note: str = "derivative orders 0 (values) and 1 (x1 differences of G_eps - G0) only"

    def to_json(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v
        return {
            "eps": self.eps,
            "norms": {k: [float(x) for x in v] for k, v in self.norms.items()},
            "slopes": {k: clean(v) for k, v in self.slopes.items()},
            "constants": {k: clean(v) for k, v in self.constants.items()},
            "exact_zero": self.exact_zero,
            "G_diff_constant": clean(self.G_diff_constant),
            "G_diff_fit_residual": clean(self.G_diff_fit_residual),
            "dG_x1": self.dG_x1,
            "kappa": self.kappa,
            "note": self.note,
        }


@dataclass
class NormalForm:
    B: np.ndarray
    B_prime: np.ndarray
    B_dprime: float
    V: TorusPotential
    kpp_abs: int
    domain: tuple  # (inner, outer) radius in y
    remainder: Optional[RemainderReport]
    shift: float
    chain: Optional[TransformChain] = field(repr=False, default=None)

    def to_json(self):
        return {
            "B": self.B.tolist(),
            "B_prime": self.B_prime.tolist(),
            "B_dprime": self.B_dprime,
            "V": self.V.to_json(),
            "kpp_abs": self.kpp_abs,
            "domain": list(self.domain),
            "shift": self.shift,
            "remainder": None if self.remainder is None else self.remainder.to_json(),
        }


def build_chain(sys: NearlyIntegrableSystem, dr: DoubleResonance, eta: float = 1.0,
                n_flow: int = 8) -> TransformChain:
    tri = unimodular_complete(dr.k_prime)
    sh = shear_transform(dr.kbar_second)
    if sh.branch == 1:
        Pm = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
    else:
        Pm = [[1, 0, 0], [0, 0, 1], [0, 1, 0]]
    PmF = tuple(tuple(Fraction(x) for x in r) for r in Pm)
    M0tF = tuple(tuple(Fraction(x) for x in r) for r in tri.M0_t)
    Lp_exact = matmul(matmul(M0tF, sh.M_t), PmF)
    Lp = _to_float(Lp_exact)
    Lq = _to_float(transpose(inverse(Lp_exact)))
    v_dd = np.linalg.solve(Lp, np.asarray(dr.p_dd, float))
    omega_v = Lp.T @ np.asarray(dr.omega, float)
    if abs(omega_v[0]) > 1e-9 * np.linalg.norm(omega_v) or abs(omega_v[1]) > 1e-9 * np.linalg.norm(omega_v):
        raise ResonantDivision(f"frequency {omega_v} not aligned with the third axis")
    omega3 = float(omega_v[2])
    if abs(omega3) < 1e-12:
        raise DomainEmpty("surviving frequency omega3 vanishes")
    P = sys.P
    mask = resonant_mask(P, dr)
    Z = P.subset(mask)
    F_orig = _homological_original(P, dr)
    h_v = sys.h.transform(Lp)
    Bt = h_v.hess(v_dd)
    Bt = 0.5 * (Bt + Bt.T)
    # the deck generator of T^3 whose image moves u3 by 2 pi
    M = _to_float(sh.M)
    gens = (np.array(Pm, float).T @ M @ np.eye(3)).T
    j = int(np.argmin(np.abs(np.abs(gens[:, 2]) - 1) + 10 * (np.abs(gens[:, 2]) < 0.5)))
    sym = TWO_PI * gens[j] * np.sign(gens[j][2])
    chain = TransformChain(
        M0=tri, shear=sh, Pm=np.array(Pm, float), Lp_exact=Lp_exact, v_dd=v_dd, omega3=omega3,
        eps=sys.eps, kappa=dr.kappa, eta=eta, F=F_orig.transform(np.linalg.inv(_to_float(tri.M0))),
        T=dr.T, Lp=Lp, Lq=Lq, h_v=h_v, P_v=P.transform(Lq), Z_v=Z.transform(Lq),
        F_v=F_orig.transform(Lq), Btilde=Bt, kpp_abs=sh.period_factor, n_flow=n_flow,
        sym_shift=sym,
    )
    chain.V, chain.s = _potential(chain)
    return chain


def _potential(chain: TransformChain):
    """V on T^2 in phi = (x1, |kbar''| x2) with max V = 0, and the shift s."""
    Z = chain.Z_v
    if Z.is_empty:
        return TorusPotential(), 0.0
    c = Z.coeffs(chain.v_dd)
    Ku = Z.K
    if np.abs(Ku[:, 2]).max(initial=0) > 1e-9:
        raise ResonantDivision("resonant mode depends on the fast angle")
    K = np.stack([np.rint(Ku[:, 0]), np.rint(Ku[:, 1] / chain.kpp_abs)], axis=1)
    if np.abs(K[:, 1] * chain.kpp_abs - Ku[:, 1]).max(initial=0) > 1e-9:
        raise ResonantDivision("resonant mode not a multiple of |kbar''| in x2")
    acc = {}
    for k, cc in zip(map(tuple, K.astype(int).tolist()), c):
        acc[k] = acc.get(k, 0) - cc
    keys = sorted(acc)
    W = TorusPotential(np.array(keys, float), np.array([acc[k] for k in keys]))
    s = W.max()
    return W.shift(-s), float(s)


def unit_samples(n: int, T: int, seed: int = 0):
    """Normalized samples: x in [0,2pi)^2, y in the unit disc (a quarter on
    the boundary), fast angle in [0, 2 pi T)."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, TWO_PI, (n, 2))
    ang = rng.uniform(0, TWO_PI, n)
    rho = np.sqrt(rng.uniform(0, 1, n))
    rho[: n // 4] = 1.0
    yu = np.stack([rho * np.cos(ang), rho * np.sin(ang)], axis=1)
    vt = rng.uniform(0, TWO_PI * T, n)
    return x, yu, vt


def measure_remainders(chain: TransformChain, delta_prime: float, n: int = 600, seed: int = 0):
    x, yu, vt = unit_samples(n, chain.T, seed)
    y = yu * chain.y_radius(delta_prime)
    theta = vt * chain.sqeps / chain.omega3
    G0 = chain.G0(x, y)
    pc = chain.pieces(x, y, -G0, theta)
    Ge = chain.G_eps(x, y, theta)
    a, b, c = chain.quadratic_coeffs(x, y)
    out = {k: float(np.abs(pc[k]).max(initial=0.0)) for k in ("R1", "R2", "R3", "Rh")}
    out["R0"] = float(np.abs(G0 - c).max(initial=0.0))
    out["G_diff"] = float(np.abs(Ge - G0).max(initial=0.0))
    # first differences in x1 of G_eps - G0 on a subset
    m = min(n, 64)
    hstep = 1e-3
    xp = x[:m].copy()
    xp[:, 0] += hstep
    d1 = (chain.G_eps(xp, y[:m], theta[:m]) - chain.G0(xp, y[:m])) - (Ge[:m] - G0[:m])
    out["dG_x1"] = float(np.abs(d1 / hstep).max())
    return out


def reduce(sys: NearlyIntegrableSystem, dr: DoubleResonance, delta_prime: float = 0.25,
           eta: float = 1.0, n_samples: int = 400, seed: int = 0, n_flow: int = 8):
    if not (0.0 < delta_prime < 0.5):
        raise ValueError("delta_prime must lie in (0, 1/2)")
    if sys.eps <= 0:
        raise DomainEmpty("the reduction needs eps > 0")
    chain = build_chain(sys, dr, eta, n_flow)
    r_out = chain.y_radius(-delta_prime)
    r_in = chain.y_radius(delta_prime)
    if sys.eps ** 0.5 * r_in * np.linalg.norm(chain.B_prime) / abs(chain.omega3) >= 1.0:
        raise DomainEmpty("eps too large: the energy relation degenerates on the sampled disc")
    if np.linalg.eigvalsh(chain.B).min() <= 0 or chain.B_dprime <= 0:
        raise DomainEmpty("reduced kinetic matrix not positive definite")
    norms = measure_remainders(chain, delta_prime, n_samples, seed)
    rep = RemainderReport([sys.eps], {k: [v] for k, v in norms.items() if k != "dG_x1"},
                          kappa=dr.kappa, dG_x1=[norms["dG_x1"]])
    nf = NormalForm(chain.B.copy(), chain.B_prime.copy(), chain.B_dprime, chain.V, chain.kpp_abs,
                    (chain.y_radius(delta_prime), r_out), rep, chain.s, chain)
    return nf, chain


ZERO_FLOOR = 1e-9  # below the Newton tolerance of G_eps: rounding noise


def _fit(eps, vals):
    eps = np.asarray(eps, float)
    vals = np.asarray(vals, float)
    if np.all(vals <= ZERO_FLOOR):
        return float("nan"), 0.0, True
    ok = vals > ZERO_FLOOR
    if ok.sum() < 2:
        return float("nan"), float(vals.max()), False
    slope, icpt = np.polyfit(np.log(eps[ok]), np.log(vals[ok]), 1)
    return float(slope), float(math.exp(icpt)), False


def remainder_sweep(sys: NearlyIntegrableSystem, dr: DoubleResonance, eps_list: Sequence[float],
                    delta_prime: float = 0.25, eta: float = 1.0, n_samples: int = 400,
                    seed: int = 0) -> RemainderReport:
    eps_list = sorted(float(e) for e in eps_list)
    if len(eps_list) < 3 or eps_list[-1] / eps_list[0] < 100 * (1 - 1e-9):
        raise ValueError("the sweep needs at least 3 eps values spanning 2 decades")
    table = {}
    dgx = []
    for e in eps_list:
        nf, _ = reduce(sys.with_eps(e), dr, delta_prime, eta, n_samples, seed)
        for k, v in nf.remainder.norms.items():
            table.setdefault(k, []).append(v[0])
        dgx.append(nf.remainder.dG_x1[0])
    rep = RemainderReport(eps_list, table, kappa=dr.kappa, dG_x1=dgx)
    for k, vals in table.items():
        s, c, z = _fit(eps_list, vals)
        rep.slopes[k], rep.constants[k], rep.exact_zero[k] = s, c, z
    gd = np.asarray(table["G_diff"])
    if np.all(gd <= ZERO_FLOOR):
        rep.G_diff_constant, rep.G_diff_fit_residual = 0.0, 0.0
    else:
        ratios = np.maximum(gd, ZERO_FLOOR) / np.asarray(eps_list) ** dr.kappa
        C = float(math.exp(np.mean(np.log(ratios))))
        rep.G_diff_constant = C
        rep.G_diff_fit_residual = float(np.abs(ratios / C - 1).max())
    return rep


def symmetry_check(nf: NormalForm, chain: TransformChain, n_samples: int = 1000, seed: int = 3,
                   delta_prime: float = 0.25) -> dict:
    """max |G_eps(sigma(x,y,theta)) - G_eps(x,y,theta)| for the deck shift sigma."""
    x, yu, vt = unit_samples(n_samples, chain.T, seed)
    y = yu * chain.y_radius(delta_prime)
    theta = vt * chain.sqeps / chain.omega3
    sh = chain.sym_shift
    x2 = x + sh[:2]
    th2 = theta + sh[2] * chain.sqeps / chain.omega3
    g1 = chain.G_eps(x, y, theta)
    g2 = chain.G_eps(x2, y, th2)
    return {"max_discrepancy": float(np.abs(g1 - g2).max()),
            "shift_x2": float(sh[1]), "shift_theta": float(sh[2] * chain.sqeps / chain.omega3),
            "n_samples": n_samples}
