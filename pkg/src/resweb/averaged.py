"""Minimal periodic orbits, alpha/beta functions and channels of
L = <A phidot, phidot>/2 + V(phi) on the two-torus.

Orbits are found in two stages.  A broken-geodesic discretization is minimized
from several seeded starts at fixed period (at fixed energy the period comes
from a root search on the discrete energy), and the best discrete loop is then
polished by single shooting with the exact variational equations.  Rotation vectors are measured in radians
per unit time, rho = 2 pi g / tau.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.integrate import solve_ivp

from .errors import DegenerateMinimizer, MinimizationStuck, NonConvexSamples
from .torus import TorusPotential

log = logging.getLogger(__name__)
TWO_PI = 2.0 * np.pi


@dataclass
class MechanicalSystem:
    A: np.ndarray
    V: TorusPotential

    def __post_init__(self):
        self.A = np.asarray(self.A, float)
        self.A = 0.5 * (self.A + self.A.T)
        if self.A.shape != (2, 2) or np.linalg.eigvalsh(self.A).min() <= 0:
            raise ValueError("kinetic matrix must be 2x2 symmetric positive definite")
        self.Ainv = np.linalg.inv(self.A)

    @classmethod
    def from_normal_form(cls, nf):
        """A = (D B D)^{-1} with D = diag(1, |kbar''|), V in phi = (x1, |kbar''| x2)."""
        D = np.diag([1.0, float(nf.kpp_abs)])
        return cls(np.linalg.inv(D @ nf.B @ D), nf.V)

    @property
    def critical_energy(self) -> float:
        """Energy above which the Jacobi metric is non-degenerate: -min V."""
        return -self.V.min() if not self.V.is_zero else 0.0

    def energy(self, phi, v):
        v = np.asarray(v, float)
        return 0.5 * np.einsum("...i,ij,...j->...", v, self.A, v) - self.V.value(phi)

    def lagrangian(self, phi, v):
        v = np.asarray(v, float)
        return 0.5 * np.einsum("...i,ij,...j->...", v, self.A, v) + self.V.value(phi)


@dataclass
class PeriodicOrbit:
    g: tuple
    tau: float
    nodes: np.ndarray
    velocities: np.ndarray
    action: float
    energy: float
    floquet: tuple
    flags: dict
    el_residual: float
    jacobi_length: float

    @property
    def rho(self):
        return TWO_PI * np.asarray(self.g, float) / self.tau

    @property
    def lam(self):
        return TWO_PI / self.tau

    @property
    def beta(self):
        return self.action / self.tau

    @property
    def J(self):
        return self.action + self.energy * self.tau

    def to_json(self, every: int = 1):
        return {
            "g": list(self.g),
            "tau": self.tau,
            "action": self.action,
            "energy": self.energy,
            "floquet": [[float(np.real(m)), float(np.imag(m))] for m in self.floquet],
            "flags": self.flags,
            "el_residual": self.el_residual,
            "nodes": self.nodes[::every].tolist(),
        }


# ---------------------------------------------------------------------------
# discrete functionals


def _unpack(x, N):
    return x.reshape(N, 2)


def _action_fixed_tau(x, ms, g, tau, N):
    phi = _unpack(x, N)
    h = tau / N
    nxt = np.vstack([phi[1:], phi[:1] + TWO_PI * g])
    d = nxt - phi
    Ad = d @ ms.A
    S = 0.5 * np.sum(Ad * d) / h + h * ms.V.value(phi).sum()
    prev = np.vstack([d[-1:], d[:-1]])
    grad = (prev @ ms.A - Ad) / h + h * ms.V.grad(phi)
    return S, grad.ravel()


def _starts(N, g, n_starts, seed, extra=None):
    rng = np.random.default_rng(seed)
    s = np.arange(N)[:, None] / N
    out = []
    if extra is not None:
        for nodes in extra:
            out.append(_resample_loop(np.asarray(nodes, float), N, g))
    for _ in range(n_starts):
        off = rng.uniform(0, TWO_PI, 2)
        base = off + TWO_PI * s * g
        noise = 0.15 * rng.standard_normal(2) * np.sin(TWO_PI * s * rng.integers(1, 3))
        out.append(base + noise)
    return out


def _resample_loop(nodes, N, g):
    M = len(nodes)
    if M == N:
        return nodes.copy()
    ext = np.vstack([nodes, nodes[:1] + TWO_PI * np.asarray(g, float)])
    t = np.linspace(0, 1, M + 1)
    tn = np.arange(N) / N
    return np.stack([np.interp(tn, t, ext[:, i]) for i in range(2)], axis=1)


def _minimize(fun, x0, gtol):
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                            options={"maxiter": 20000, "gtol": gtol, "ftol": 1e-15, "maxcor": 30})
    res2 = optimize.minimize(fun, res.x, jac=True, method="CG", options={"maxiter": 4000, "gtol": gtol})
    if res2.fun <= res.fun:
        res = res2
    gnorm = float(np.abs(fun(res.x)[1]).max())
    return res.x, float(res.fun), gnorm


def _project_dirs(V: TorusPotential):
    """Orthonormal basis of the directions V actually depends on."""
    K = V.K[np.abs(V.C) > 0]
    K = K[np.any(K != 0, axis=1)]
    if len(K) == 0:
        return np.zeros((0, 2))
    _, s, vt = np.linalg.svd(K)
    r = int(np.sum(s > 1e-9))
    return vt[:r]


def _point_to_polyline(a, b, g, P):
    """max over points of a of the distance to the closed polyline b (torus)."""
    nxt = np.vstack([b[1:], b[:1] + TWO_PI * np.asarray(g, float)])
    seg = (nxt - b) @ P.T
    w = a[:, None, :] - b[None, :, :]
    w = ((w + np.pi) % TWO_PI - np.pi) @ P.T
    ss = np.maximum(np.sum(seg * seg, axis=1), 1e-300)
    t = np.clip(np.einsum("ijk,jk->ij", w, seg) / ss, 0.0, 1.0)
    d = np.linalg.norm(w - t[..., None] * seg[None, :, :], axis=-1)
    return float(d.min(axis=1).max())


def loop_distance(a, b, V: Optional[TorusPotential] = None, g=(0, 0)) -> float:
    """Symmetric distance between two closed loops on the torus, modulo the
    continuous symmetries of V (directions on which V does not depend)."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if V is not None:
        P = _project_dirs(V)
        if len(P) == 0:
            return 0.0
    else:
        P = np.eye(2)
    return max(_point_to_polyline(a, b, g, P), _point_to_polyline(b, a, g, P))


# ---------------------------------------------------------------------------
# shooting


def _rhs(ms):
    A_inv = ms.Ainv

    def f(t, z):
        phi, v = z[0:2], z[2:4]
        a = A_inv @ ms.V.grad(phi)
        L = 0.5 * v @ ms.A @ v + ms.V.value(phi)
        Phi = z[5:].reshape(4, 4)
        Jm = np.zeros((4, 4))
        Jm[0:2, 2:4] = np.eye(2)
        Jm[2:4, 0:2] = A_inv @ ms.V.hess(phi)
        return np.concatenate([v, a, [L], (Jm @ Phi).ravel()])

    return f


def _integrate(ms, phi0, v0, tau, n_out=None, rtol=1e-12, atol=1e-12):
    z0 = np.concatenate([phi0, v0, [0.0], np.eye(4).ravel()])
    t_eval = None if n_out is None else np.linspace(0, tau, n_out + 1)
    sol = solve_ivp(_rhs(ms), (0.0, tau), z0, method="DOP853", rtol=rtol, atol=atol, t_eval=t_eval)
    if not sol.success:
        raise MinimizationStuck(f"integration failed: {sol.message}")
    return sol


def _shoot(ms, g, phi0, v0, tau, tau_target=None, E_target=None, max_iter=40, tol=1e-11):
    g = np.asarray(g, float)
    phi_ref, v_ref = phi0.copy(), v0.copy()
    x = np.concatenate([phi0, v0, [tau]])

    def resid(x):
        sol = _integrate(ms, x[:2], x[2:4], x[4])
        zT = sol.y[:, -1]
        phiT, vT = zT[0:2], zT[2:4]
        r = np.concatenate([phiT - x[:2] - TWO_PI * g, vT - x[2:4],
                            [v_ref @ (x[:2] - phi_ref)],
                            [x[4] - tau_target if tau_target is not None
                             else ms.energy(x[:2], x[2:4]) - E_target]])
        M = zT[5:].reshape(4, 4)
        aT = ms.Ainv @ ms.V.grad(phiT)
        J = np.zeros((6, 5))
        J[0:4, 0:4] = M - np.eye(4)
        J[0:2, 4] = vT
        J[2:4, 4] = aT
        J[4, 0:2] = v_ref
        if tau_target is not None:
            J[5, 4] = 1.0
        else:
            J[5, 0:2] = -ms.V.grad(x[:2])
            J[5, 2:4] = ms.A @ x[2:4]
        return r, J

    r, J = resid(x)
    nr = np.linalg.norm(r)
    for _ in range(max_iter):
        if nr < tol:
            break
        dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        step = 1.0
        while step > 1e-4:
            xn = x + step * dx
            if xn[4] <= 0:
                step *= 0.5
                continue
            try:
                rn, Jn = resid(xn)
            except MinimizationStuck:
                step *= 0.5
                continue
            if np.linalg.norm(rn) < nr or np.linalg.norm(rn) < tol:
                break
            step *= 0.5
        else:
            break
        x, r, J, nr = xn, rn, Jn, np.linalg.norm(rn)
    return x, nr


def _floquet(M, tol_unit=1e-5, margin=1e-6):
    ev = np.linalg.eigvals(M[:4, :4])
    order = np.argsort(-np.abs(ev - 1.0))
    mu = ev[order[:2]]
    flags = {}
    if np.all(np.abs(ev - 1.0) < tol_unit):
        kind = "degenerate"
    elif np.all(np.abs(np.imag(mu)) < 1e-9) and np.max(np.abs(mu)) > 1 + margin:
        kind = "hyperbolic"
    elif np.all(np.abs(np.abs(mu) - 1) < 1e-6):
        kind = "elliptic"
    else:
        kind = "parabolic"
    flags["type"] = kind
    flags["product_defect"] = float(abs(mu[0] * mu[1] - 1.0))
    flags["log_multiplier"] = float(np.log(np.max(np.abs(mu))))
    return (complex(mu[0]), complex(mu[1])), flags


def _discrete_candidates(ms, gf, tau, N, starts):
    fun = lambda x: _action_fixed_tau(x, ms, gf, tau, N)
    cands = []
    for x0 in starts:
        x, val, gn = _minimize(fun, x0.ravel(), 1e-10)
        cands.append((val, gn, _unpack(x, N)))
    cands.sort(key=lambda c: c[0])
    return cands


def _discrete_energy(ms, g, nodes, tau):
    return _discrete_orbit(ms, g, nodes, tau, None).energy


def _period_for_energy(ms, g, energy, N, starts):
    """Root of E(tau) = energy for the discrete minimal loops (E decreases in tau)."""
    gf = np.asarray(g, float)
    Ag = math.sqrt(gf @ ms.A @ gf)
    vmean = float(np.mean(ms.V.grid(32)[1])) if not ms.V.is_zero else 0.0
    tau0 = TWO_PI * Ag / math.sqrt(2 * max(energy + vmean, 1e-3 * (energy - ms.critical_energy)))
    warm = [starts]

    def f(log_tau):
        tau = math.exp(log_tau)
        c = _discrete_candidates(ms, gf, tau, N, warm[0])[0]
        warm[0] = [c[2]]
        return _discrete_energy(ms, g, c[2], tau) - energy

    lo = hi = math.log(tau0)
    flo = fhi = f(lo)
    step = 0.5
    while fhi > 0:
        lo, flo = hi, fhi
        hi += step
        fhi = f(hi)
    while flo < 0:
        hi, fhi = lo, flo
        lo -= step
        flo = f(lo)
    lt = optimize.brentq(f, lo, hi, xtol=1e-7) if lo != hi else lo
    return math.exp(lt)


def minimal_orbit(ms: MechanicalSystem, g: Sequence[int], *, tau: Optional[float] = None,
                  energy: Optional[float] = None, lam: Optional[float] = None, N: int = 256,
                  n_starts: int = 8, seed: int = 0, extra_starts=None, strict: bool = False,
                  return_candidates: bool = False, refine: bool = True):
    """Global minimizer of the action in the free homotopy class g.

    Exactly one of tau, energy, lam (= 2 pi / tau) is given.  At fixed energy
    the period is found first by a root search on the discrete minimal loops.
    """
    g = np.asarray(g, int)
    if not np.any(g) or math.gcd(int(abs(g[0])), int(abs(g[1]))) != 1:
        raise ValueError(f"class {tuple(g)} must be nonzero and irreducible")
    if lam is not None:
        tau = TWO_PI / lam
    if (tau is None) == (energy is None):
        raise ValueError("give exactly one of tau, energy, lam")
    if energy is not None and energy <= ms.critical_energy:
        raise ValueError(f"energy {energy} not above the critical level {ms.critical_energy}")
    gf = g.astype(float)
    starts = _starts(N, gf, n_starts, seed, extra_starts)
    tau_d = tau
    if energy is not None:
        best0 = _discrete_candidates(ms, gf, TWO_PI, N, starts[:2])[0][2]
        tau_d = _period_for_energy(ms, g, energy, N, [best0])
    cands = _discrete_candidates(ms, gf, tau_d, N, starts)
    if all(c[1] > 1e-4 for c in cands):
        raise MinimizationStuck(f"gradient stagnated at {min(c[1] for c in cands):.3g}")
    best = cands[0]
    if refine:
        orbit = _refine(ms, g, best[2], tau_d, tau, energy)
    else:
        orbit = _discrete_orbit(ms, g, best[2], tau_d, None)
    if strict and orbit.flags["type"] == "degenerate":
        raise DegenerateMinimizer("monodromy has only unit eigenvalues")
    if return_candidates:
        return orbit, [(c[0], c[1], c[2], tau_d) for c in cands]
    return orbit


def _discrete_orbit(ms, g, nodes, tau, energy):
    """Orbit data read off a discrete loop sampled uniformly in time."""
    N = len(nodes)
    gf = np.asarray(g, float)
    h = tau / N
    nxt = np.vstack([nodes[1:], nodes[:1] + TWO_PI * gf])
    prev = np.vstack([nodes[-1:] - TWO_PI * gf, nodes[:-1]])
    vel = (nxt - prev) / (2 * h)
    S = float(_action_fixed_tau(nodes.ravel(), ms, gf, tau, N)[0])
    E = float(np.mean(ms.energy(nodes, vel)))
    return PeriodicOrbit(tuple(int(x) for x in g), float(tau), nodes, vel, S, E,
                         (complex(np.nan), complex(np.nan)), {"type": "unrefined", "refined": False},
                         float("nan"), S + E * tau)


def _refine(ms, g, nodes, tau_d, tau, energy):
    """Shooting from the fastest node with either tau or the energy fixed."""
    N = len(nodes)
    disc = _discrete_orbit(ms, g, nodes, tau_d, None)
    i0 = int(np.argmax(ms.V.value(nodes)))
    phi0, v0 = nodes[i0].copy(), disc.velocities[i0].copy()
    if energy is not None:
        speed = math.sqrt(max(2 * (energy + float(ms.V.value(phi0))), 1e-300))
        v0 = speed * v0 / math.sqrt(v0 @ ms.A @ v0)
    x, res = _shoot(ms, g, phi0, v0, tau_d, tau_target=tau, E_target=energy)
    if not np.isfinite(res) or res > 1e-7:
        log.warning("shooting did not converge (residual %.3g); keeping the discrete loop", res)
        disc.el_residual = float(res)
        return disc
    phi0, v0, T = x[:2], x[2:4], float(x[4])
    sol = _integrate(ms, phi0, v0, T, n_out=N)
    zT = sol.y[:, -1]
    M = zT[5:].reshape(4, 4)
    mu, flags = _floquet(M)
    flags["refined"] = True
    pts = sol.y[0:2, :-1].T
    vel = sol.y[2:4, :-1].T
    E = float(np.mean(ms.energy(pts, vel)))
    S = float(zT[4])
    return PeriodicOrbit(tuple(int(v) for v in g), T, pts, vel, S, E, mu, flags, float(res), S + E * T)


# ---------------------------------------------------------------------------
# channels


@dataclass
class AlphaBeta:
    lam: np.ndarray  # ray parameter: rho = lam g
    beta: np.ndarray
    sigma: np.ndarray  # <c, g> on matched pairs
    alpha: np.ndarray  # alpha at matched c (orbit energies)
    alpha_discrete: np.ndarray  # discrete conjugate evaluated at sigma
    flats: list
    flat_boundary: float
    flat_level: float
    duality_gap_min: float
    duality_gap_matched: float
    g: tuple = (1, 0)
    support: list = field(default_factory=list)

    def to_json(self):
        return {
            "g": list(self.g),
            "lam": self.lam.tolist(),
            "beta": self.beta.tolist(),
            "sigma": self.sigma.tolist(),
            "alpha": self.alpha.tolist(),
            "alpha_discrete": self.alpha_discrete.tolist(),
            "flats": self.flats,
            "flat_boundary": self.flat_boundary,
            "flat_level": self.flat_level,
            "duality_gap_min": self.duality_gap_min,
            "duality_gap_matched": self.duality_gap_matched,
        }


def discrete_conjugate(lam, beta, sigma):
    """alpha(sigma) = max_i (lam_i sigma - beta_i)."""
    lam = np.asarray(lam, float)
    beta = np.asarray(beta, float)
    s = np.atleast_1d(np.asarray(sigma, float))
    return np.max(np.outer(s, lam) - beta[None, :], axis=1)


def alpha_beta(orbits: Sequence[PeriodicOrbit], ms: Optional[MechanicalSystem] = None,
               beta0: Optional[float] = None, tol: float = 1e-8, kinks=None) -> AlphaBeta:
    """Conjugate beta along the ray lam g sampled by minimal orbits.

    beta(0) is the minimum of V (rest at the bottom of the potential).  Every
    sample gets its supporting interval of <c, g>; only the rest point and the
    energies listed in ``kinks`` (double minimizers) are reported as flats.
    """
    if not orbits:
        raise ValueError("no orbits")
    g = np.asarray(orbits[0].g, float)
    if beta0 is None:
        beta0 = ms.V.min() if ms is not None and not ms.V.is_zero else 0.0
    orbs = sorted(orbits, key=lambda o: o.lam)
    lam = np.array([0.0] + [o.lam for o in orbs])
    beta = np.array([beta0] + [o.beta for o in orbs])
    alpha = np.array([-beta0] + [o.energy for o in orbs])
    sigma_orb = np.array([o.J / TWO_PI for o in orbs])
    # discrete convexity of beta in lam
    slopes = np.diff(beta) / np.diff(lam)
    for i in range(len(slopes) - 1):
        if slopes[i + 1] < slopes[i] - tol * max(1.0, abs(slopes[i])):
            raise NonConvexSamples("beta fails discrete convexity",
                                   (float(lam[i]), float(lam[i + 1]), float(lam[i + 2])))
    # ray coordinates: <c, rho> = lam <c, g>; sigma := <c, g>
    sigma = np.concatenate([[0.0], sigma_orb])
    alpha_d = discrete_conjugate(lam, beta, sigma)
    # Fenchel inequality on the full grid of (sigma_j, lam_i)
    grid_gap = alpha_d[:, None] + beta[None, :] - sigma[:, None] * lam[None, :]
    matched_gap = alpha[1:] + beta[1:] - sigma[1:] * lam[1:]
    support, flats = [], []
    kink_lams = [o.lam for o in orbs if o.energy in set(kinks or ())]
    left = 0.0
    for i in range(len(lam)):
        right = slopes[i] if i < len(slopes) else float("inf")
        lo = -right if i == 0 else left
        item = {"lam": float(lam[i]), "c_lo": float(lo), "c_hi": float(right),
                "level": float(lam[i] * right - beta[i]) if math.isfinite(right) else float(alpha[i])}
        support.append(item)
        if right - lo > 1e-9 and (i == 0 or lam[i] in kink_lams):
            flats.append(item)
        left = right
    return AlphaBeta(lam, beta, sigma, alpha, alpha_d, flats, float(slopes[0]), float(-beta0),
                     float(grid_gap.min()), float(np.abs(matched_gap).max(initial=0.0)),
                     tuple(int(x) for x in g), support)


@dataclass
class ChannelData:
    g: tuple
    energies: np.ndarray
    orbits: list
    alpha: Optional[AlphaBeta]
    bifurcations: list
    E_levels: list
    segments: list
    osc_bound: float
    osc_measured: list
    E1: float
    degenerate: bool
    hyperbolic_margins: list
    embedding: Optional[dict] = None

    @property
    def lambda_grid(self):
        return [o.lam for o in self.orbits]

    def to_json(self, every: int = 8):
        return {
            "g": list(self.g),
            "energies": [float(e) for e in self.energies],
            "lambda_grid": [float(x) for x in self.lambda_grid],
            "orbits": [o.to_json(every) for o in self.orbits],
            "alpha": None if self.alpha is None else self.alpha.to_json(),
            "bifurcations": self.bifurcations,
            "E_levels": self.E_levels,
            "segments": self.segments,
            "osc_bound": self.osc_bound,
            "osc_measured": self.osc_measured,
            "E1": self.E1,
            "degenerate": self.degenerate,
            "hyperbolic_margins": self.hyperbolic_margins,
            "embedding": self.embedding,
        }


def osc_y(orbit: PeriodicOrbit, ms: MechanicalSystem, kpp_abs: int = 1) -> float:
    """max |y(t) - y(t')| with y = D A phidot, D = diag(1, |kbar''|)."""
    D = np.diag([1.0, float(kpp_abs)])
    y = orbit.velocities @ ms.A.T @ D.T
    diff = y[:, None, :] - y[None, :, :]
    return float(np.linalg.norm(diff, axis=-1).max())


def osc_bound(ms: MechanicalSystem, E1: float, kpp_abs: int = 1, B_min_eig: Optional[float] = None,
              n: int = 128) -> float:
    X, _ = ms.V.grid(n)
    G = ms.V.grad(X)
    t1 = 2.0 * float(max(np.abs(G[..., 0]).max(), kpp_abs * np.abs(G[..., 1]).max()))
    if B_min_eig is None:
        D = np.diag([1.0, float(kpp_abs)])
        B = np.linalg.inv(D) @ np.linalg.inv(ms.A) @ np.linalg.inv(D)
        B_min_eig = float(np.linalg.eigvalsh(B).min())
    t2 = 4.0 / B_min_eig * math.sqrt(max(E1 + (ms.V.max() if not ms.V.is_zero else 0.0), 0.0))
    return max(t1, t2)


def scan_channel(ms: MechanicalSystem, g: Sequence[int], energy_range: Sequence[float],
                 n_grid: int = 16, N: int = 128, n_starts: int = 8, seed: int = 0,
                 tol_act: float = 1e-7, sep_tol: float = 1e-2, kpp_abs: int = 1,
                 d_cap: float = 0.5, with_alpha: bool = True) -> ChannelData:
    if n_grid < 16:
        raise ValueError("n_grid must be at least 16")
    lo, hi = float(energy_range[0]), float(energy_range[1])
    if not (ms.critical_energy < lo < hi):
        raise ValueError("energy range must lie above the critical level")
    energies = np.linspace(lo, hi, n_grid)
    orbits, bif, margins, oscs = [], [], [], []
    prev = None
    for E in energies:
        extra = None if prev is None else [prev.nodes]
        orbit, cands = minimal_orbit(ms, g, energy=float(E), N=N, n_starts=n_starts, seed=seed,
                                     extra_starts=extra, return_candidates=True)
        orbits.append(orbit)
        margins.append(orbit.flags.get("log_multiplier", float("nan")))
        oscs.append(osc_y(orbit, ms, kpp_abs))
        # a second distinct candidate with nearly the same discrete value
        best = cands[0]
        for val, gn, nodes, tau_c in cands[1:]:
            if loop_distance(best[2], nodes, ms.V, g) <= sep_tol:
                continue
            if val - best[0] > 1e-4 * max(1.0, abs(best[0])):
                break
            other = _refine(ms, g, nodes, tau_c, None, float(E))
            gap = abs(other.action - orbit.action)
            dist = loop_distance(orbit.nodes, other.nodes, ms.V, g)
            if gap < tol_act and dist > sep_tol:
                bif.append({"E": float(E), "action_gap": float(gap), "separation": float(dist)})
            break
        prev = orbit
    E_levels = sorted({b["E"] for b in bif})
    if len(E_levels) > 1:
        d = min(d_cap, 0.5 * float(np.min(np.diff(E_levels))))
    else:
        d = d_cap
    bounds = [lo] + E_levels + [hi]
    segments = [[float(bounds[i] - (d if i > 0 else 0.0)), float(bounds[i + 1] + (d if i + 1 < len(bounds) - 1 else 0.0))]
                for i in range(len(bounds) - 1)]
    o1 = minimal_orbit(ms, g, tau=1.0, N=N, n_starts=n_starts, seed=seed)
    bound = osc_bound(ms, o1.energy, kpp_abs)
    degenerate = ms.V.is_zero or all(o.flags.get("type") == "degenerate" for o in orbits)
    ab = alpha_beta(orbits, ms, kinks=E_levels) if with_alpha else None
    return ChannelData(tuple(int(x) for x in g), energies, orbits, ab, bif, E_levels, segments,
                       bound, oscs, o1.energy, degenerate, margins)


def energy_for_ymax(ms, g, y_target, E_lo, E_hi, kpp_abs=1, N=128, tol=1e-6, seed=0):
    """Bisection on E for max |y| along the minimal orbit equal to y_target."""
    D = np.diag([1.0, float(kpp_abs)])

    def ymax(E):
        o = minimal_orbit(ms, g, energy=E, N=N, seed=seed)
        return float(np.linalg.norm(o.velocities @ ms.A.T @ D.T, axis=1).max())

    a, b = E_lo, E_hi
    fa, fb = ymax(a) - y_target, ymax(b) - y_target
    if fa * fb > 0:
        raise ValueError("target max|y| not bracketed by the energy interval")
    while b - a > tol * max(1.0, abs(b)):
        m = 0.5 * (a + b)
        fm = ymax(m) - y_target
        if fa * fm <= 0:
            b, fb = m, fm
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# embedding into H^1(T^3)


def channel_points(ab: AlphaBeta):
    """(c_phi, alpha) samples of the channel: matched pairs plus the flat ends."""
    g = np.asarray(ab.g, float)
    gg = float(g @ g)
    sig = np.concatenate([[0.0, ab.flat_boundary], ab.sigma[1:]])
    alpha = np.concatenate([[ab.flat_level, ab.flat_level], ab.alpha[1:]])
    c = sig[:, None] * g[None, :] / gg
    return c, alpha


def embed_points(c_phi, alpha, chain):
    """Displacements p - p'' of the lifted classes (c_phi, alpha)."""
    D = np.diag([1.0, float(chain.kpp_abs)])
    c_x = np.asarray(c_phi, float) @ D.T
    e = chain.eps
    ct = np.concatenate([math.sqrt(e) * c_x, (-(e / chain.omega3) * np.asarray(alpha, float))[:, None]],
                        axis=1)
    return ct @ chain.Lp.T


def unembed_points(dp, chain):
    D = np.diag([1.0, float(chain.kpp_abs)])
    ct = np.asarray(dp, float) @ np.linalg.inv(chain.Lp).T
    e = chain.eps
    c_x = ct[:, :2] / math.sqrt(e)
    alpha = -ct[:, 2] * chain.omega3 / e
    return c_x @ np.linalg.inv(D).T, alpha


def embed_channel(channel: ChannelData, chain, p_dd) -> dict:
    c, alpha = channel_points(channel.alpha)
    dp = embed_points(c, alpha, chain)
    c2, a2 = unembed_points(dp, chain)
    scale_c = max(1.0, float(np.abs(c).max()))
    scale_a = max(1.0, float(np.abs(alpha).max()))
    err = max(float(np.abs(c2 - c).max()) / scale_c, float(np.abs(a2 - alpha).max()) / scale_a)
    pts = np.asarray(p_dd, float) + dp
    diam = float(np.linalg.norm(dp[:, None, :] - dp[None, :, :], axis=-1).max()) if len(dp) > 1 else 0.0
    emb = {"points": pts.tolist(), "displacements": dp.tolist(), "roundtrip_error": err,
           "diameter": diam, "eps": chain.eps, "p_dd": [float(x) for x in p_dd]}
    if err >= 1e-12:
        raise AssertionError(f"embedding round trip error {err:.3g}")
    channel.embedding = emb
    return emb


def embedding_diameter_slope(channel: ChannelData, chain_for_eps, eps_list):
    """Fit log(diameter) against log(eps) over rebuilt chains."""
    c, alpha = channel_points(channel.alpha)
    diams = []
    for e in eps_list:
        ch = chain_for_eps(e)
        dp = embed_points(c, alpha, ch)
        diams.append(float(np.linalg.norm(dp[:, None, :] - dp[None, :, :], axis=-1).max()))
    slope = float(np.polyfit(np.log(eps_list), np.log(diams), 1)[0])
    return slope, diams


# ---------------------------------------------------------------------------
# overlap over a channel


@dataclass
class OverlapReport:
    length: float
    required: float
    passed: bool
    xi: float
    eta: float
    n_samples: int
    margins: list = field(default_factory=list)

    def to_json(self):
        return {"length": self.length, "required": self.required, "passed": self.passed,
                "xi": self.xi, "eta": self.eta, "n_samples": self.n_samples}


def overlap_check(circle_points, sites, eps: float, xi: float, kappa: float,
                  delta_prime: float = 0.25, eta: float = 1.0) -> OverlapReport:
    """Arc length of the circle along which every site's local domain contains
    the (xi/4) sqrt(eps) disc around the point.

    ``sites`` is a list of (p_dd, T, chain) tuples; chain may be None, in which
    case only the ball condition is tested.
    """
    pts = np.asarray(circle_points, float)
    ok = np.ones(len(pts), bool)
    need = xi / 4 * math.sqrt(eps)
    margins = []
    for p_dd, T, chain in sites:
        r = (1 - delta_prime) / (eta * T) * eps ** kappa
        dist = np.linalg.norm(pts - np.asarray(p_dd, float), axis=1)
        cond = r - dist >= need
        if chain is not None:
            dv = (pts - np.asarray(p_dd, float)) @ np.linalg.inv(chain.Lp).T
            y = np.linalg.norm(dv[:, :2], axis=1) / math.sqrt(eps)
            r_y = (1 - delta_prime) / (eta * T) * eps ** (kappa - 0.5)
            cond &= y + need / math.sqrt(eps) <= r_y
        ok &= cond
        margins.append(float((r - dist).max()))
    seg = np.linalg.norm(np.diff(np.vstack([pts, pts[:1]]), axis=0), axis=1)
    both = ok & np.roll(ok, -1)
    length = float(seg[both].sum())
    req = xi / 2 * math.sqrt(eps)
    return OverlapReport(length, req, bool(length >= req), xi, eta, len(pts), margins)

