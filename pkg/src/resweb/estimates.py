"""Measured deviation constants against their analytic bounds.

For a frequency omega, the flat of the perturbed alpha function supported at
omega is compared with the unperturbed point dh^{-1}(omega).  For quadratic h
and a perturbation whose omega-resonant part depends on one angle s = <k0, q>,
the flat is a segment along k0 whose half-width is the separatrix action of the
one-degree-of-freedom pendulum  mu p_s^2 / 2 + eps f(s),  mu = <k0, Q k0>.
The same half-width is recomputed with the weak-KAM solver as a cross-check.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import MinimalSetUnavailable
from .model import NearlyIntegrableSystem, convexity_bounds, sup_abs, sup_norms
from .torus import TorusPotential

TWO_PI = 2.0 * np.pi


@dataclass
class ResonantFactor:
    k0: np.ndarray  # primitive resonant direction
    harmonics: dict  # j -> complex coefficient of exp(i j s)
    mu: float

    def f(self, s):
        s = np.asarray(s, float)
        out = np.zeros_like(s, dtype=complex)
        for j, c in self.harmonics.items():
            out = out + c * np.exp(1j * j * s)
        return out.real

    @property
    def max_f(self) -> float:
        s = np.linspace(0, TWO_PI, 4097)[:-1]
        i = int(np.argmax(self.f(s)))
        from scipy.optimize import minimize_scalar

        r = minimize_scalar(lambda x: -float(self.f(x)), bracket=(s[i] - 0.01, s[i], s[i] + 0.01))
        return max(float(self.f(s[i])), -float(r.fun))

    def separatrix_action(self) -> float:
        """(1/2 pi) * closed integral of sqrt(2 (max f - f) / mu) ds, at eps = 1."""
        if not self.harmonics:
            return 0.0
        fm = self.max_f
        g = lambda s: math.sqrt(max(2.0 * (fm - float(self.f(s))) / self.mu, 0.0))
        s = np.linspace(0, TWO_PI, 4097)[:-1]
        s0 = float(s[int(np.argmax(self.f(s)))])
        val, _ = integrate.quad(g, s0, s0 + TWO_PI, limit=400, epsabs=1e-13, epsrel=1e-12)
        return val / TWO_PI

    def potential(self) -> TorusPotential:
        """V(phi) = -(f(phi_1) - min f) for the scaled planar weak-KAM problem."""
        terms = []
        const = 0.0
        for j, c in self.harmonics.items():
            if j == 0:
                const -= c.real
            elif j > 0:
                # c e^{ijs} + conj -> 2 Re c cos js - 2 Im c sin js
                terms.append(((j, 0), -2 * c.real, 2 * c.imag))
        V = TorusPotential.from_terms(terms, const)
        return V.shift(-V.max()) if not V.is_zero else V


def resonant_factor(sys: NearlyIntegrableSystem, omega, tol: float = 1e-10) -> Optional[ResonantFactor]:
    """The omega-resonant part of P at p0 = dh^{-1}(omega) as a function of one angle."""
    if sys.h.kind != "quadratic":
        raise MinimalSetUnavailable("the analytic route needs a quadratic h")
    P = sys.P
    if P.is_empty:
        return None
    omega = np.asarray(omega, float)
    p0 = np.linalg.solve(sys.h.Q, omega)
    labels = P.labels
    res = np.abs(labels @ omega) <= tol * np.maximum(np.linalg.norm(labels, axis=1), 1) * np.linalg.norm(omega)
    res &= np.any(labels != 0, axis=1)
    if not res.any():
        return None
    ks = labels[res]
    g = reduce(math.gcd, [int(abs(x)) for x in ks[0]])
    k0 = ks[0] // g
    harm = {}
    c = P.coeffs(p0)
    for k, cc in zip(labels[res], c[res]):
        j = None
        for a, b in zip(k, k0):
            if b != 0:
                j = int(round(a / b))
                break
        if j is None or not np.array_equal(k, j * k0):
            raise MinimalSetUnavailable("resonant modes of P are not collinear (double resonance)")
        harm[j] = harm.get(j, 0) + complex(cc)
    mu = float(k0 @ sys.h.Q @ k0)
    return ResonantFactor(k0.astype(float), harm, mu)


def weakkam_half_width(rf: ResonantFactor, n: int = 128, tau: float = 0.25, tol_alpha: float = 1e-6,
                       c_hi: Optional[float] = None, iters: int = 30) -> float:
    """Bisection on c1 for the edge of the rest flat of the scaled planar system."""
    from .weakkam import TorusGrid, alpha_of

    V = rf.potential()
    A = np.diag([1.0 / rf.mu, 1.0])
    grid = TorusGrid(n, 32)
    a0 = alpha_of(A, V, (0.0, 0.0), grid, tau)
    lo = 0.0
    hi = c_hi if c_hi is not None else 2.0 * rf.separatrix_action() + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if alpha_of(A, V, (mid, 0.0), grid, tau) > a0 + tol_alpha:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-4:
            break
    return 0.5 * (lo + hi)


@dataclass
class DeviationReport:
    rows: list
    C_s_measured: float
    C_s_bound: float
    C_r: float
    C_H: float
    D_H: float
    C_V: float
    norm_P: float
    norm_dpP: float
    m: float
    cross_check: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows)

    @property
    def xi(self) -> float:
        return 4.0 * (self.C_V + self.D_H + self.C_H)

    def to_json(self):
        return {"rows": self.rows, "C_s_measured": self.C_s_measured, "C_s_bound": self.C_s_bound,
                "C_r": self.C_r, "C_H": self.C_H, "D_H": self.D_H, "C_V": self.C_V, "xi": self.xi,
                "norm_P": self.norm_P, "norm_dpP": self.norm_dpP, "m": self.m,
                "cross_check": self.cross_check, "passed": self.passed}

    def to_csv(self, dest):
        """Write to a path or an open text stream."""
        if hasattr(dest, "write"):
            self._write_csv(dest)
            return
        with open(dest, "w", newline="") as fh:
            self._write_csv(fh)

    def _write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "lemma", "measured", "bound", "pass"])
        for r in self.rows:
            w.writerow([repr(r["eps"]), "minimal_set", repr(r["deviation"]), repr(r["bound"]),
                        "pass" if r["deviation"] <= r["bound"] else "fail"])
            w.writerow([repr(r["eps"]), "frequency_scale", repr(abs(r["nu"] - 1.0)),
                        repr(r["nu_bound"]), "pass" if r["nu_ok"] else "fail"])


def d_h_formula(m: float, norm_P: float, norm_dpP: float) -> float:
    return math.sqrt(2.0 / m * (2.0 * norm_P + norm_dpP))


def verify_deviation(sys: NearlyIntegrableSystem, omega, eps_list: Sequence[float],
                     cross_check: bool = False, radius: Optional[float] = None,
                     wk_n: int = 128) -> DeviationReport:
    """Deviation of the flat at omega from dh^{-1}(omega), and the frequency
    rescaling nu putting the flat on the energy level, for each eps."""
    omega = np.asarray(omega, float)
    R = sys.h.domain_radius if radius is None else radius
    m, _ = convexity_bounds(sys.h, R)
    norm_P = 0.0 if sys.P.is_empty else sup_abs(sys.P, R)
    norm_dpP = 0.0 if sys.P.is_empty else sup_norms(sys.P, R, 1, part="p")
    C_bound = 2.0 * math.sqrt(norm_P / m)
    D_H = d_h_formula(m, norm_P, norm_dpP)
    rf = resonant_factor(sys, omega)
    width1 = 0.0 if rf is None else rf.separatrix_action() * float(np.linalg.norm(rf.k0))
    maxf = 0.0 if rf is None else rf.max_f
    p0 = np.linalg.solve(sys.h.Q, omega)
    E0 = float(sys.h.value(p0))
    rows = []
    for e in eps_list:
        dev = width1 * math.sqrt(e)
        bound = C_bound * math.sqrt(e)
        arg = 1.0 - e * maxf / E0
        flag = ""
        if arg <= 0:
            nu, flag = float("nan"), "energy level below the flat"
        else:
            nu = math.sqrt(arg)
        rows.append({"eps": float(e), "deviation": dev, "bound": bound, "nu": nu,
                     "nu_ratio": abs(nu - 1.0) / math.sqrt(e) if e > 0 else 0.0,
                     "pass": bool(dev <= bound + 1e-15) and not flag, "flag": flag or None})
    ratios = [r["nu_ratio"] for r in rows if math.isfinite(r["nu_ratio"])]
    C_r = max(ratios) if ratios else 0.0
    for r in rows:
        r["nu_bound"] = C_r * math.sqrt(r["eps"])
        r["nu_ok"] = bool(abs(r["nu"] - 1.0) <= r["nu_bound"] + 1e-15)
    C_s = max((r["deviation"] / math.sqrt(r["eps"]) for r in rows if r["eps"] > 0), default=0.0)
    cc = {}
    if cross_check and rf is not None:
        wk = weakkam_half_width(rf, n=wk_n) * float(np.linalg.norm(rf.k0))
        cc = {"analytic_half_width": width1, "weakkam_half_width": wk, "difference": abs(wk - width1)}
    return DeviationReport(rows, C_s, C_bound, C_r, C_s, D_H, norm_P, norm_P, norm_dpP, m, cc)
