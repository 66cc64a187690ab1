"""Nearly integrable Hamiltonians H(p, q) = h(p) + eps * P(p, q).

P is a finite Fourier sum whose coefficients are polynomials in p.  Modes are
kept in complex form with both k and -k present, so every evaluator returns
the real part of an exactly Hermitian sum.  Linear changes of variables act on
the wavevectors and on a linear map applied to p before the polynomial is
evaluated, so a series can be carried through every frame change of the
reduction without re-expanding anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import optimize

from ._poly import MonomialBasis, monomial_exps, parse_poly
from .errors import BadShape, DegreeOverflow, NotConvex

TWO_PI = 2.0 * np.pi


def reduce_angle(q):
    """Angles into [0, 2pi)."""
    return np.mod(q, TWO_PI)


@dataclass(frozen=True)
class FourierMode:
    """One real mode  cos_coeff(p) cos<k,q> + sin_coeff(p) sin<k,q>."""

    k: tuple
    cos: str = "0"
    sin: str = "0"


class FourierPerturbation:
    """Sum over modes of c_k(w) exp(i <k, q>), with w = pmap @ p.

    ``K`` holds the (possibly rational) wavevectors in the current frame and
    ``labels`` the integer vectors they came from, which survive transforms.
    """

    def __init__(self, K, C, exps, pmap=None, labels=None):
        self.K = np.asarray(K, dtype=float).reshape(-1, 3)
        self.basis = MonomialBasis(exps)
        self.C = np.asarray(C, dtype=complex).reshape(len(self.K), len(self.basis))
        if self.C.shape[1] != len(self.basis):
            raise BadShape("coefficient matrix does not match the monomial basis")
        self.pmap = np.eye(3) if pmap is None else np.asarray(pmap, dtype=float)
        if labels is None:
            labels = np.rint(self.K).astype(int)
        self.labels = np.asarray(labels, dtype=int).reshape(-1, 3)

    # construction -----------------------------------------------------------
    @classmethod
    def empty(cls, degree: int = 0):
        exps = monomial_exps(degree)
        return cls(np.zeros((0, 3)), np.zeros((0, len(exps))), exps)

    @classmethod
    def from_modes(cls, modes: Iterable[FourierMode], degree: int = 2, k_max: Optional[int] = None):
        exps = monomial_exps(degree)
        acc: dict = {}

        def add(k, c):
            acc[k] = acc.get(k, np.zeros(len(exps), dtype=complex)) + c

        for m in modes:
            k = tuple(int(x) for x in m.k)
            if len(k) != 3:
                raise BadShape(f"mode vector {m.k!r} is not a 3-vector")
            if k_max is not None and max(abs(x) for x in k) > k_max:
                raise BadShape(f"mode {k} exceeds the declared cutoff {k_max}")
            a = parse_poly(m.cos, exps)
            b = parse_poly(m.sin, exps)
            if k == (0, 0, 0):
                add(k, a.astype(complex))
                continue
            add(k, (a - 1j * b) / 2)
            add(tuple(-x for x in k), (a + 1j * b) / 2)
        keys = sorted(k for k, c in acc.items() if np.any(c != 0))
        K = np.array(keys, dtype=float).reshape(-1, 3)
        C = np.array([acc[k] for k in keys]).reshape(len(keys), len(exps))
        return cls(K, C, exps, labels=np.array(keys, dtype=int).reshape(-1, 3))

    # basic structure --------------------------------------------------------
    def __len__(self):
        return len(self.K)

    @property
    def is_empty(self) -> bool:
        return len(self.K) == 0 or not np.any(self.C)

    @property
    def degree(self) -> int:
        return self.basis.degree

    def copy_with(self, K=None, C=None, pmap=None, labels=None):
        return FourierPerturbation(
            self.K if K is None else K,
            self.C if C is None else C,
            self.basis.exps,
            self.pmap if pmap is None else pmap,
            self.labels if labels is None else labels,
        )

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return self.copy_with(K=self.K[mask], C=self.C[mask], labels=self.labels[mask])

    def scale(self, lam):
        return self.copy_with(C=self.C * lam)

    def transform(self, A):
        """Pull back through q_old = A q_new, p_old = A^{-T} p_new."""
        A = np.asarray(A, dtype=float)
        return self.copy_with(K=self.K @ A, pmap=self.pmap @ np.linalg.inv(A).T)

    def hermitian_defect(self) -> float:
        """Largest |c_{-k} - conj(c_k)| over the stored modes."""
        idx = {tuple(l): i for i, l in enumerate(self.labels.tolist())}
        worst = 0.0
        for i, l in enumerate(self.labels.tolist()):
            j = idx.get(tuple(-x for x in l))
            if j is None:
                worst = max(worst, float(np.abs(self.C[i]).max(initial=0.0)))
            else:
                worst = max(worst, float(np.abs(self.C[j] - np.conj(self.C[i])).max(initial=0.0)))
        return worst

    # evaluation -------------------------------------------------------------
    def _w(self, p):
        return np.asarray(p, dtype=float) @ self.pmap.T

    def _phase(self, q):
        return np.exp(1j * (np.asarray(q, dtype=float) @ self.K.T))

    def coeffs(self, p):
        return self.basis.eval(self._w(p)) @ self.C.T

    def _dcoeffs(self, p):
        g = self.basis.grad(self._w(p))  # (..., nmono, 3)
        return np.einsum("...ni,mn->...mi", g, self.C) @ self.pmap

    def complex_value(self, p, q):
        if len(self.K) == 0:
            return np.zeros(np.broadcast_shapes(np.shape(p)[:-1], np.shape(q)[:-1]), dtype=complex)
        return np.sum(self.coeffs(p) * self._phase(q), axis=-1)

    def value(self, p, q):
        return self.complex_value(p, q).real

    def grad_q(self, p, q):
        if len(self.K) == 0:
            return np.zeros(np.broadcast_shapes(np.shape(p), np.shape(q)))
        t = self.coeffs(p) * self._phase(q)
        return (1j * t @ self.K).real

    def grad_p(self, p, q):
        if len(self.K) == 0:
            return np.zeros(np.broadcast_shapes(np.shape(p), np.shape(q)))
        return np.einsum("...mi,...m->...i", self._dcoeffs(p), self._phase(q)).real

    def hess_p(self, p, q):
        shape = np.broadcast_shapes(np.shape(p), np.shape(q))
        if len(self.K) == 0:
            return np.zeros(shape + (3,))
        h = np.einsum("...nij,mn->...mij", self.basis.hess(self._w(p)), self.C)
        h = np.einsum("ai,...maj,jb->...mib", self.pmap.T, h, self.pmap)  # pmap^T H pmap
        return np.einsum("...mij,...m->...ij", h, self._phase(q)).real

    def hess_q(self, p, q):
        shape = np.broadcast_shapes(np.shape(p), np.shape(q))
        if len(self.K) == 0:
            return np.zeros(shape + (3,))
        t = self.coeffs(p) * self._phase(q)
        return -np.einsum("...m,mi,mj->...ij", t, self.K, self.K).real

    def mixed(self, p, q):
        """d^2 P / dp_i dq_j."""
        shape = np.broadcast_shapes(np.shape(p), np.shape(q))
        if len(self.K) == 0:
            return np.zeros(shape + (3,))
        d = self._dcoeffs(p)
        return np.einsum("...mi,mj,...m->...ij", 1j * d, self.K, self._phase(q)).real

    def value_difference(self, p0, dp, q):
        """P(p0 + dp, q) - P(p0, q) without cancellation in small dp."""
        if len(self.K) == 0:
            return np.zeros(np.broadcast_shapes(np.shape(p0)[:-1], np.shape(dp)[:-1], np.shape(q)[:-1]))
        w0, dw = self._w(p0), self._w(dp)
        w0, dw = np.broadcast_arrays(w0, dw)
        c = self.basis.shifted(w0, dw, 1) @ self.C.T
        return np.sum(c * self._phase(q), axis=-1).real

    def to_json(self):
        out = []
        for l, k, c in zip(self.labels.tolist(), self.K.tolist(), self.C):
            terms = [[list(map(int, e)), [float(z.real), float(z.imag)]]
                     for e, z in zip(self.basis.exps.tolist(), c) if z != 0]
            out.append({"label": l, "k": [float(x) for x in k], "coeff": terms})
        return {"pmap": self.pmap.tolist(), "modes": out}


# ---------------------------------------------------------------------------


class ConvexHamiltonian:
    """Quadratic h = <Qp,p>/2, or a real polynomial in w = pmap @ p."""

    def __init__(self, Q=None, poly=None, degree: int = 4, domain_radius: float = 2.0,
                 coef=None, exps=None, pmap=None):
        self.domain_radius = float(domain_radius)
        self.pmap = np.eye(3) if pmap is None else np.asarray(pmap, dtype=float)
        if Q is not None:
            Q = np.asarray(Q, dtype=float)
            if Q.shape != (3, 3):
                raise BadShape("quadratic form must be 3x3")
            self.kind = "quadratic"
            self.Q = 0.5 * (Q + Q.T)
            self.basis = None
            self.coef = None
        else:
            self.kind = "polynomial"
            self.Q = None
            if coef is not None:
                self.basis = MonomialBasis(exps)
                self.coef = np.asarray(coef, dtype=float)
            else:
                exps = monomial_exps(degree)
                self.basis = MonomialBasis(exps)
                self.coef = parse_poly(poly, exps)

    @property
    def is_quadratic(self) -> bool:
        if self.kind == "quadratic":
            return True
        return bool(np.all(self.coef[self.basis.exps.sum(axis=1) != 2] == 0))

    def transform(self, L):
        """h'(v) = h(L v)."""
        L = np.asarray(L, dtype=float)
        if self.kind == "quadratic":
            return ConvexHamiltonian(Q=L.T @ self.Q @ L, domain_radius=np.inf)
        return ConvexHamiltonian(coef=self.coef, exps=self.basis.exps, pmap=self.pmap @ L,
                                 domain_radius=np.inf)

    def _w(self, p):
        return np.asarray(p, dtype=float) @ self.pmap.T

    def value(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * np.einsum("...i,ij,...j->...", p, self.Q, p)
        return self.basis.eval(self._w(p)) @ self.coef

    def grad(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "quadratic":
            return p @ self.Q
        return np.einsum("...ni,n->...i", self.basis.grad(self._w(p)), self.coef) @ self.pmap

    def hess(self, p):
        p = np.asarray(p, dtype=float)
        if self.kind == "quadratic":
            return np.broadcast_to(self.Q, p.shape[:-1] + (3, 3)).copy()
        h = np.einsum("...nij,n->...ij", self.basis.hess(self._w(p)), self.coef)
        return np.einsum("ai,...ab,bj->...ij", self.pmap, h, self.pmap)

    def difference(self, p0, d):
        """h(p0 + d) - h(p0)."""
        p0 = np.asarray(p0, dtype=float)
        d = np.asarray(d, dtype=float)
        if self.kind == "quadratic":
            return np.einsum("...i,ij,...j->...", p0 + 0.5 * d, self.Q, d)
        w0, dw = np.broadcast_arrays(self._w(p0), self._w(d))
        return self.basis.shifted(w0, dw, 1) @ self.coef

    def taylor_tail(self, p0, d):
        """h(p0 + d) minus its second-order Taylor polynomial at p0."""
        p0 = np.asarray(p0, dtype=float)
        d = np.asarray(d, dtype=float)
        if self.kind == "quadratic":
            return np.zeros(np.broadcast_shapes(p0.shape[:-1], d.shape[:-1]))
        w0, dw = np.broadcast_arrays(self._w(p0), self._w(d))
        return self.basis.shifted(w0, dw, 3) @ self.coef

    def argmin(self) -> np.ndarray:
        if self.kind == "quadratic":
            return np.zeros(3)
        res = optimize.minimize(lambda p: float(self.value(p)), np.zeros(3),
                                jac=lambda p: self.grad(p), method="BFGS",
                                options={"gtol": 1e-13})
        return res.x

    def min_value(self) -> float:
        return float(self.value(self.argmin()))

    def to_json(self):
        if self.kind == "quadratic":
            return {"kind": "quadratic", "Q": self.Q.tolist()}
        return {"kind": "polynomial", "pmap": self.pmap.tolist(),
                "terms": [[e, float(c)] for e, c in zip(self.basis.exps.tolist(), self.coef) if c != 0]}


@dataclass
class NearlyIntegrableSystem:
    h: ConvexHamiltonian
    P: FourierPerturbation
    eps: float
    E: float
    r: int = 6
    d_p: int = 2
    k_modes: Optional[int] = None

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.P.degree > self.d_p and not self.P.is_empty:
            used = self.P.basis.exps[np.any(self.P.C != 0, axis=0)]
            if used.size and used.sum(axis=1).max() > self.d_p:
                raise DegreeOverflow(f"perturbation degree exceeds d_p = {self.d_p}")
        if self.E <= self.h.min_value():
            raise ValueError("energy must exceed min h")

    def H(self, p, q):
        return self.h.value(p) + self.eps * self.P.value(p, q)

    def with_eps(self, eps):
        return NearlyIntegrableSystem(self.h, self.P, eps, self.E, self.r, self.d_p, self.k_modes)

    def with_P(self, P):
        return NearlyIntegrableSystem(self.h, P, self.eps, self.E, self.r, self.d_p, self.k_modes)

    def level_point(self, direction) -> np.ndarray:
        """The point of h = E on the ray from argmin h along ``direction``."""
        p0 = self.h.argmin()
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        f = lambda t: float(self.h.value(p0 + t * u)) - self.E
        hi = 1.0
        while f(hi) < 0:
            hi *= 2.0
            if hi > 1e8:
                raise ValueError("level set is unbounded along the ray")
        t = optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        return p0 + t * u

    def level_inside_domain(self, n: int = 400) -> bool:
        """Sample h^{-1}(E) along Fibonacci rays and test it sits inside B_D."""
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        th = np.pi * (1 + 5 ** 0.5) * i
        dirs = np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=1)
        rad = max(np.linalg.norm(self.level_point(d)) for d in dirs)
        return bool(rad <= self.h.domain_radius)


def evaluate_jet(sys: NearlyIntegrableSystem, p, q):
    """H with grad_p, grad_q and the p-Hessian, all analytic."""
    p = np.asarray(p, dtype=float)
    q = reduce_angle(np.asarray(q, dtype=float))
    e = sys.eps
    value = sys.h.value(p) + e * sys.P.value(p, q)
    gp = sys.h.grad(p) + e * sys.P.grad_p(p, q)
    gq = e * sys.P.grad_q(p, q)
    hp = sys.h.hess(p) + e * sys.P.hess_p(p, q)
    return value, gp, gq, hp


# ---------------------------------------------------------------------------
# sup norms and convexity


def _ball_grid(radius: float, n: int) -> np.ndarray:
    if radius == 0 or n <= 1:
        return np.zeros((1, 3))
    n = n if n % 2 else n + 1
    x = np.linspace(-radius, radius, n)
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[np.linalg.norm(g, axis=1) <= radius * (1 + 1e-12)]


def _torus_grid(n: int) -> np.ndarray:
    x = np.arange(n) * TWO_PI / n
    return np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)


def _order_sup(P: FourierPerturbation, pg, qg, order: int, part: str) -> float:
    best = 0.0
    chunk = max(1, 200000 // max(1, len(qg)))
    for s in range(0, len(pg), chunk):
        p = pg[s:s + chunk, None, :]
        q = qg[None, :, :]
        vals = []
        if order == 0:
            vals.append(np.abs(P.value(p, q)))
        elif order == 1:
            if part in ("all", "q"):
                vals.append(np.abs(P.grad_q(p, q)).max(axis=-1))
            if part in ("all", "p"):
                vals.append(np.abs(P.grad_p(p, q)).max(axis=-1))
        else:
            if part in ("all", "q"):
                vals.append(np.abs(P.hess_q(p, q)).max(axis=(-1, -2)))
            if part in ("all", "p"):
                vals.append(np.abs(P.hess_p(p, q)).max(axis=(-1, -2)))
            if part == "all":
                vals.append(np.abs(P.mixed(p, q)).max(axis=(-1, -2)))
        for v in vals:
            best = max(best, float(v.max(initial=0.0)))
    return best


def sup_norms(P: FourierPerturbation, radius: float, order: int = 0, *, part: str = "all",
              n_q: int = 12, n_p: int = 5, rel_tol: float = 1e-3, max_refine: int = 2) -> float:
    """Grid lower bound for the C^order norm of P on B_radius x T^3.

    The norm is the largest absolute value of any partial derivative of order
    at most ``order`` (``part`` restricts derivatives to p or q).  The grid is
    doubled until successive maxima agree to ``rel_tol``.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if P.is_empty:
        return 0.0
    orders = range(order + 1) if part == "all" else range(1, order + 1)
    prev = None
    for level in range(max_refine + 1):
        nq = n_q * 2 ** level
        if nq ** 3 > 2_500_000:
            break
        pg = _ball_grid(radius, n_p + 2 * level)
        qg = _torus_grid(nq)
        cur = max(_order_sup(P, pg, qg, o, part) for o in orders)
        if prev is not None and abs(cur - prev) <= rel_tol * max(abs(cur), 1e-300):
            prev = cur
            break
        prev = cur
    return prev


def sup_abs(P: FourierPerturbation, radius: float, **kw) -> float:
    """Order-0 sup with a local polish of the best grid point."""
    val = sup_norms(P, radius, 0, **kw)
    if val == 0.0:
        return 0.0
    pg = _ball_grid(radius, 5)
    qg = _torus_grid(16)
    vals = np.abs(P.value(pg[:, None, :], qg[None, :, :]))
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    p0 = pg[i]

    def neg(q):
        return -abs(float(P.value(p0, q)))

    res = optimize.minimize(neg, qg[j], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
    return max(val, -float(res.fun))


def convexity_bounds(h: ConvexHamiltonian, radius: Optional[float] = None,
                     shell: Optional[Sequence[float]] = None, n: int = 21):
    """Extreme Hessian eigenvalues over a ball grid or an energy shell."""
    if h.kind == "quadratic":
        ev = np.linalg.eigvalsh(h.Q)
    else:
        R = h.domain_radius if radius is None else radius
        pts = _ball_grid(R, n)
        if shell is not None:
            vals = h.value(pts)
            pts = pts[(vals >= shell[0]) & (vals <= shell[1])]
        if len(pts) == 0:
            raise ValueError("empty sampling region")
        ev = np.linalg.eigvalsh(h.hess(pts)).ravel()
    m, m_prime = float(ev.min()), float(ev.max())
    if m <= 0:
        raise NotConvex(f"Hessian eigenvalue {m} <= 0 in the sampled region")
    return m, m_prime
