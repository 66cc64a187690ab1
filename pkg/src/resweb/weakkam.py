"""Discrete weak-KAM theory on the two-torus and its double cover.

The one-step kernel is the trapezoid action

    S(q', q) = <A (q - q'), q - q'> / (2 tau) + tau (V(q') + V(q)) / 2,

which is exact for free motion and for rest at critical points.  Lax-Oleinik
steps are min-plus (max-plus forward) convolutions over grid displacements; for
diagonal A the quadratic part splits into two one-dimensional passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import CopiesNotSeparated, NonUniqueShortSegment, NotConverged
from .torus import TorusPotential

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    n1: int
    n2: int
    cover: str = "base"  # "base" or "double" (q1 mod 4 pi)

    def __post_init__(self):
        if self.n1 < 32 or self.n2 < 32:
            raise ValueError("grid resolution must be at least 32 per axis")
        if self.cover not in ("base", "double"):
            raise ValueError(f"unknown cover {self.cover!r}")

    @property
    def L1(self):
        return 2 * TWO_PI if self.cover == "double" else TWO_PI

    @property
    def L2(self):
        return TWO_PI

    @property
    def h1(self):
        return self.L1 / self.n1

    @property
    def h2(self):
        return self.L2 / self.n2

    @property
    def shape(self):
        return (self.n1, self.n2)

    def axes(self):
        return np.arange(self.n1) * self.h1, np.arange(self.n2) * self.h2

    def points(self):
        a, b = self.axes()
        return np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1)

    def double(self):
        if self.cover != "base":
            raise ValueError("already a double cover")
        return TorusGrid(2 * self.n1, self.n2, "double")

    def lift(self, field_base):
        """Pull a base field back to the double cover."""
        return np.concatenate([field_base, field_base], axis=0)

    def min_image(self, d):
        d = np.asarray(d, float).copy()
        d[..., 0] = (d[..., 0] + self.L1 / 2) % self.L1 - self.L1 / 2
        d[..., 1] = (d[..., 1] + self.L2 / 2) % self.L2 - self.L2 / 2
        return d

    def to_json(self):
        return {"n1": self.n1, "n2": self.n2, "cover": self.cover}


@dataclass
class ActionKernel:
    A: np.ndarray
    V: TorusPotential
    tau: float
    grid: TorusGrid
    c: np.ndarray
    D: float
    w: tuple  # window half-widths in cells
    Vgrid: np.ndarray = field(repr=False)  # potential plus any penalty on the grid
    alpha_shift: float = 0.0

    def value(self, qp, q):
        qp = np.asarray(qp, float)
        q = np.asarray(q, float)
        d = q - qp
        return (0.5 * np.einsum("...i,ij,...j->...", d, self.A, d) / self.tau
                + 0.5 * self.tau * (self.V.value(qp) + self.V.value(q)))

    def grad(self, qp, q):
        """(dS/dq', dS/dq)."""
        d = np.asarray(q, float) - np.asarray(qp, float)
        Ad = d @ self.A.T / self.tau
        return (-Ad + 0.5 * self.tau * self.V.grad(qp), Ad + 0.5 * self.tau * self.V.grad(q))

    def with_c(self, c):
        return ActionKernel(self.A, self.V, self.tau, self.grid, np.asarray(c, float), self.D, self.w,
                            self.Vgrid, self.alpha_shift)

    def with_penalty(self, pen):
        return ActionKernel(self.A, self.V, self.tau, self.grid, self.c, self.D, self.w,
                            self.Vgrid + pen, self.alpha_shift)

    def continuity_check(self, n: int = 200, seed: int = 0, step: float = 1e-6) -> float:
        """Relative gap between finite-difference and analytic end gradients."""
        rng = np.random.default_rng(seed)
        qp = rng.uniform(0, TWO_PI, (n, 2))
        d = rng.uniform(-1, 1, (n, 2)) * self.D * self.tau
        q = qp + d
        gqp, gq = self.grad(qp, q)
        worst = 0.0
        for i in range(2):
            e = np.zeros(2)
            e[i] = step
            fd = (self.value(qp, q + e) - self.value(qp, q - e)) / (2 * step)
            worst = max(worst, float(np.abs(fd - gq[:, i]).max() / max(1.0, np.abs(gq).max())))
        return worst

    def twist_check(self, n: int = 200, seed: int = 0, step: float = 1e-4) -> bool:
        """Mixed second derivative d2S/dq dq' is negative definite at samples."""
        rng = np.random.default_rng(seed)
        qp = rng.uniform(0, TWO_PI, (n, 2))
        q = qp + rng.uniform(-1, 1, (n, 2)) * self.D * self.tau
        M = np.zeros((n, 2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            gp = self.grad(qp + e, q)[1]
            gm = self.grad(qp - e, q)[1]
            M[:, :, j] = (gp - gm) / (2 * step)
        sym = 0.5 * (M + np.swapaxes(M, 1, 2))
        return bool(np.all(np.linalg.eigvalsh(sym).max(axis=1) < 0) and np.all(np.linalg.det(M) > 0))


def build_kernel(A, V: TorusPotential, tau: float, grid: TorusGrid, c=(0.0, 0.0),
                 D: Optional[float] = None, uniqueness: float = 0.1) -> ActionKernel:
    """Kernel for L = <A v, v>/2 + V(q) - <c, v>.

    tau must satisfy tau^2 |V''| < uniqueness; it is halved once if not.
    """
    A = np.asarray(A, float)
    Vpp = 0.0 if V.is_zero else float(np.abs(V.hess(grid.points())).max())
    if tau * tau * Vpp >= uniqueness:
        tau = tau / 2
        if tau * tau * Vpp >= uniqueness:
            raise NonUniqueShortSegment(f"tau={tau:.3g} too long for |V''|={Vpp:.3g}")
    c = np.asarray(c, float)
    if D is None:
        osc = 0.0 if V.is_zero else V.max() - V.min()
        Ainv = np.linalg.inv(A)
        D = 2.0 * (math.sqrt(c @ Ainv @ c) + math.sqrt(2.0 * osc * np.linalg.eigvalsh(Ainv).max())) + 0.5
    w1 = min(grid.n1 // 2 - 1, int(math.ceil(D * tau / grid.h1)))
    w2 = min(grid.n2 // 2 - 1, int(math.ceil(D * tau / grid.h2)))
    Vgrid = V.value(grid.points()) if not V.is_zero else np.zeros(grid.shape)
    return ActionKernel(A, V, tau, grid, c, float(D), (w1, w2), Vgrid)


def _minplus(f, K, grid: TorusGrid, w, A, tau, sign_c: float):
    """g(q) = min_d f(q - d) + <A d, d>/(2 tau) - sign_c <c, d> over grid d."""
    c = K
    if abs(A[0, 1]) < 1e-15:
        out = f
        for ax, (h, wi) in enumerate(((grid.h1, w[0]), (grid.h2, w[1]))):
            best = None
            for s in range(-wi, wi + 1):
                d = s * h
                cost = 0.5 * A[ax, ax] * d * d / tau - sign_c * c[ax] * d
                cand = np.roll(out, s, axis=ax) + cost
                best = cand if best is None else np.minimum(best, cand)
            out = best
        return out
    best = None
    for s1 in range(-w[0], w[0] + 1):
        r1 = np.roll(f, s1, axis=0)
        for s2 in range(-w[1], w[1] + 1):
            d = np.array([s1 * grid.h1, s2 * grid.h2])
            cost = 0.5 * d @ A @ d / tau - sign_c * c @ d
            cand = np.roll(r1, s2, axis=1) + cost
            best = cand if best is None else np.minimum(best, cand)
    return best


def lo_step(kernel: ActionKernel, u, direction: str = "backward"):
    """One Lax-Oleinik step without renormalization."""
    hv = 0.5 * kernel.tau * kernel.Vgrid
    if direction == "backward":
        return _minplus(u + hv, kernel.c, kernel.grid, kernel.w, kernel.A, kernel.tau, +1.0) + hv
    if direction == "forward":
        return -_minplus(-u + hv, kernel.c, kernel.grid, kernel.w, kernel.A, kernel.tau, -1.0) - hv
    raise ValueError(f"direction must be backward or forward, got {direction!r}")


@dataclass
class WeakKAMSolution:
    direction: str
    u: np.ndarray
    c: np.ndarray
    alpha: float
    residual: float
    iterations: int
    grid: TorusGrid
    side: str = "plain"
    semiconcavity: float = float("nan")
    period: int = 1

    def to_json(self):
        return {"direction": self.direction, "side": self.side, "c": self.c.tolist(),
                "alpha": self.alpha, "residual": self.residual, "iterations": self.iterations,
                "grid": self.grid.to_json(), "semiconcavity": self.semiconcavity, "period": self.period}


def semiconcavity_constant(u, grid: TorusGrid, direction: str = "backward") -> float:
    """max (backward) or -min (forward) of the axis second differences."""
    d1 = (np.roll(u, -1, 0) - 2 * u + np.roll(u, 1, 0)) / grid.h1 ** 2
    d2 = (np.roll(u, -1, 1) - 2 * u + np.roll(u, 1, 1)) / grid.h2 ** 2
    m = max(d1.max(), d2.max()) if direction == "backward" else max((-d1).max(), (-d2).max())
    return float(m)


def lax_oleinik(kernel: ActionKernel, u0=None, direction: str = "backward", max_iters: int = 20000,
                tol: float = 1e-9, strict: bool = True, max_period: int = 64) -> WeakKAMSolution:
    """Iterate u <- T u - mean(T u) to a fixed point; alpha from the mean drift.

    Grid dynamics may settle on a cycle of p steps instead (rotation on the
    grid); then alpha is the drift averaged over the cycle and ``period`` = p.
    """
    u = np.zeros(kernel.grid.shape) if u0 is None else np.asarray(u0, float).copy()
    u = u - u.mean()
    sgn = -1.0 if direction == "backward" else 1.0
    res = float("inf")
    drift = 0.0
    period = 1
    hist, drifts = [], []
    for it in range(1, max_iters + 1):
        Tu = lo_step(kernel, u, direction)
        diff = Tu - u
        drift = float(diff.mean())
        res = float(np.abs(diff - drift).max())
        u = Tu - Tu.mean()
        if res < tol:
            break
        hist.append(u)
        drifts.append(drift)
        if len(hist) > max_period + 1:
            hist.pop(0)
            drifts.pop(0)
        if it % 8 == 0 and len(hist) > 2:
            found = False
            for p in range(2, len(hist)):
                r = float(np.abs(hist[-1] - hist[-1 - p]).max())
                if r < tol:
                    period, res, drift = p, r, float(np.mean(drifts[-p:]))
                    found = True
                    break
            if found:
                break
    alpha = sgn * drift / kernel.tau
    sol = WeakKAMSolution(direction, u, kernel.c.copy(), alpha, res, it, kernel.grid,
                          semiconcavity=semiconcavity_constant(u, kernel.grid, direction), period=period)
    if res >= tol and strict:
        raise NotConverged(f"Lax-Oleinik residual {res:.3g} after {max_iters} steps", sol)
    return sol


def alpha_of(A, V, c, grid: TorusGrid, tau: float, **kw) -> float:
    return lax_oleinik(build_kernel(A, V, tau, grid, c), **kw).alpha


# ---------------------------------------------------------------------------
# Aubry proxy and elementary solutions


def _periodic_distance(mask, grid: TorusGrid):
    """Euclidean distance to the set mask on the periodic grid."""
    if not mask.any():
        return np.full(mask.shape, np.inf)
    big = np.tile(~mask, (3, 3))
    dist = ndimage.distance_transform_edt(big, sampling=(grid.h1, grid.h2))
    n1, n2 = mask.shape
    return dist[n1:2 * n1, n2:2 * n2]


def aubry_proxy(kernel: ActionKernel, u_minus, u_plus, delta_level: float = 1e-8):
    """Cells where the base barrier u- - u+ attains its minimum, kept only if
    the backward one-step minimizer of the cell stays in the set."""
    B = u_minus - u_plus
    S = B <= B.min() + delta_level
    idx = np.argwhere(S)
    grid = kernel.grid
    keep = np.zeros_like(S)
    hv = 0.5 * kernel.tau * kernel.Vgrid
    f = u_minus + hv
    w1, w2 = kernel.w
    s1 = np.arange(-w1, w1 + 1)
    s2 = np.arange(-w2, w2 + 1)
    D1, D2 = np.meshgrid(s1 * grid.h1, s2 * grid.h2, indexing="ij")
    d = np.stack([D1, D2], axis=-1)
    cost = 0.5 * np.einsum("...i,ij,...j->...", d, kernel.A, d) / kernel.tau - d @ kernel.c
    for i, j in idx:
        src1 = (i - s1) % grid.n1
        src2 = (j - s2) % grid.n2
        vals = f[np.ix_(src1, src2)] + cost
        a, b = np.unravel_index(np.argmin(vals), vals.shape)
        keep[i, j] = S[src1[a], src2[b]]
    return keep if keep.any() else S


@dataclass
class ElementaryPair:
    u_minus_l: WeakKAMSolution
    u_plus_r: WeakKAMSolution
    u_minus_r: WeakKAMSolution
    u_plus_l: WeakKAMSolution
    copies: tuple  # boolean masks on the double cover
    tube: float
    levels: list
    near_tube_error: float
    monotone: bool
    extrapolated: dict = field(default_factory=dict)

    def to_json(self):
        return {"tube": self.tube, "levels": self.levels, "near_tube_error": self.near_tube_error,
                "monotone": self.monotone,
                "solutions": [s.to_json() for s in (self.u_minus_l, self.u_plus_r, self.u_minus_r, self.u_plus_l)]}


def _bump(dist, width):
    x = np.clip(dist / width, 0.0, 1.0)
    return (1.0 - x * x) ** 2


def _anchor(u, mask):
    return u - u[mask].mean()


def elementary_solutions(kernel: ActionKernel, penalty_levels: Sequence[float] = (1.0, 0.5),
                         tube_cells: int = 4, delta_level: float = 1e-8, tol: float = 1e-9,
                         max_iters: int = 20000):
    """Side-tagged solutions on the double cover selected by penalties near the
    opposite Aubry copy, extrapolated to zero penalty.

    ``kernel`` lives on the base grid.  Copy l is the lift with q1 in [0, 2 pi),
    copy r the lift with q1 in [2 pi, 4 pi).
    """
    levels = sorted(penalty_levels, reverse=True)
    if len(levels) < 2:
        raise ValueError("need two penalty levels for the extrapolation")
    base = kernel.grid
    um = lax_oleinik(kernel, direction="backward", tol=tol, max_iters=max_iters)
    up = lax_oleinik(kernel, direction="forward", tol=tol, max_iters=max_iters)
    A0 = aubry_proxy(kernel, um.u, up.u, delta_level)
    dg = base.double()
    zero = np.zeros_like(A0)
    cl = np.concatenate([A0, zero], axis=0)
    cr = np.concatenate([zero, A0], axis=0)
    width = tube_cells * max(dg.h1, dg.h2)
    dist_l = _periodic_distance(cl, dg)
    dist_r = _periodic_distance(cr, dg)
    if np.any(cl & (dist_r <= 2 * width)) or np.any(cr & (dist_l <= 2 * width)):
        raise CopiesNotSeparated("lifted Aubry copies overlap at grid resolution")
    kd = ActionKernel(kernel.A, kernel.V, kernel.tau, dg, kernel.c, kernel.D, (kernel.w[0], kernel.w[1]),
                      dg.lift(kernel.Vgrid))
    bump_l = _bump(dist_l, width)
    bump_r = _bump(dist_r, width)

    def solve(pen, direction, anchor_mask):
        s = lax_oleinik(kd.with_penalty(pen), direction=direction, tol=tol, max_iters=max_iters)
        s.u = _anchor(s.u, anchor_mask)
        return s

    out = {}
    for name, direction, pen_mask, anchor in (("minus_l", "backward", bump_r, cl), ("plus_r", "forward", bump_l, cr),
                                               ("minus_r", "backward", bump_l, cr), ("plus_l", "forward", bump_r, cl)):
        sols = [solve(v * pen_mask, direction, anchor) for v in levels[:2]]
        v1, v2 = levels[0], levels[1]
        u0 = (v1 * sols[1].u - v2 * sols[0].u) / (v1 - v2)
        ext = WeakKAMSolution(direction, u0 - u0.mean(), kernel.c.copy(), sols[1].alpha,
                              max(s.residual for s in sols), sols[1].iterations, dg,
                              side=name.split("_")[1],
                              semiconcavity=semiconcavity_constant(u0, dg, direction))
        out[name] = (ext, sols)
    # monotonicity in the penalty level, backward case, Aubry-anchored gauge
    s_hi, s_lo = out["minus_l"][1]
    monotone = bool(np.all(s_hi.u >= s_lo.u - 1e-9))
    # near-tube agreement with the lifted base solution
    near = dist_l <= width
    ul = out["minus_l"][1][1].u
    ub = dg.lift(um.u)
    e = (ul - ul[near].mean()) - (ub - ub[near].mean())
    near_err = float(np.abs(e[near]).max())
    return ElementaryPair(out["minus_l"][0], out["plus_r"][0], out["minus_r"][0], out["plus_l"][0],
                          (cl, cr), width, list(levels[:2]), near_err, monotone,
                          {"base_minus": um, "base_plus": up, "aubry": A0})


# ---------------------------------------------------------------------------
# barriers


@dataclass
class BarrierField:
    B: np.ndarray
    grid: TorusGrid
    min_value: float
    argmin: np.ndarray
    gauge: float = 0.0
    side: str = "l"

    def to_json(self):
        return {"grid": self.grid.to_json(), "min": self.min_value, "gauge": self.gauge,
                "side": self.side, "argmin_cells": int(self.argmin.sum())}

    def to_csv(self, path, header_extra: str = ""):
        hdr = (f"cover={self.grid.cover} n1={self.grid.n1} n2={self.grid.n2} "
               f"gauge=mean-zero side={self.side} {header_extra}").strip()
        np.savetxt(path, self.B, delimiter=",", header=hdr, fmt="%.12e")


def barrier(u_minus, u_plus, grid: TorusGrid, grid_tol: float = 1e-9, side: str = "l") -> BarrierField:
    um = np.asarray(u_minus.u if hasattr(u_minus, "u") else u_minus, float)
    up = np.asarray(u_plus.u if hasattr(u_plus, "u") else u_plus, float)
    if um.shape != up.shape or um.shape != grid.shape:
        raise ValueError("fields must share the grid")
    B = um - up
    m = float(B.min())
    return BarrierField(B, grid, m, B <= m + grid_tol, float(B.mean()), side)


@dataclass
class ArgminReport:
    labels: np.ndarray
    n_components: int
    diameters: list
    max_diameter: float
    verdicts: list

    def to_json(self):
        return {"n_components": self.n_components, "diameters": self.diameters,
                "max_diameter": self.max_diameter, "verdicts": self.verdicts}


def _periodic_label(mask):
    st = np.ones((3, 3), int)
    lab, n = ndimage.label(mask, structure=st)
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    n1, n2 = mask.shape
    for off in (-1, 0, 1):
        for j in range(n2):  # wrap along axis 0
            a, b = lab[n1 - 1, j], lab[0, (j + off) % n2]
            if a and b:
                union(a, b)
        for i in range(n1):  # wrap along axis 1
            a, b = lab[i, n2 - 1], lab[(i + off) % n1, 0]
            if a and b:
                union(a, b)
    roots = sorted({find(x) for x in range(1, n + 1)})
    remap = {r: k + 1 for k, r in enumerate(roots)}
    out = np.zeros_like(lab)
    for x in range(1, n + 1):
        out[lab == x] = remap[find(x)]
    return out, len(roots)


def _diameter(points, grid: TorusGrid, cap: int = 2000):
    if len(points) > cap:
        points = points[:: int(math.ceil(len(points) / cap))]
    best = 0.0
    for k in range(0, len(points), 500):
        d = grid.min_image(points[k:k + 500, None, :] - points[None, :, :])
        best = max(best, float(np.linalg.norm(d, axis=-1).max()))
    return best


def argmin_components(bf: BarrierField, delta_level: float, squares=(), grid_tol: float = 1e-9) -> ArgminReport:
    """Connected components (8-neighbour, periodic) of {B <= min B + delta_level}.

    ``squares`` are (center, half_side) pairs; a square is non-trivial when
    some component's intersection projects onto a full side of it.
    """
    if delta_level <= 2 * grid_tol:
        raise ValueError("delta_level must exceed twice the grid tolerance")
    grid = bf.grid
    mask = bf.B <= bf.min_value + delta_level
    lab, n = _periodic_label(mask)
    P = grid.points()
    diams = [_diameter(P[lab == k], grid) for k in range(1, n + 1)]
    verdicts = []
    a1, a2 = grid.axes()
    for center, half in squares:
        center = np.asarray(center, float)
        d = grid.min_image(P - center)
        inside = (np.abs(d[..., 0]) <= half) & (np.abs(d[..., 1]) <= half)
        nontrivial = False
        for k in range(1, n + 1):
            sel = inside & (lab == k)
            if not sel.any():
                continue
            proj1 = np.any(sel, axis=1)[np.any(inside, axis=1)]
            proj2 = np.any(sel, axis=0)[np.any(inside, axis=0)]
            if proj1.all() or proj2.all():
                nontrivial = True
                break
        verdicts.append({"center": center.tolist(), "half": float(half),
                         "verdict": "non-trivial" if nontrivial else "trivial"})
    return ArgminReport(lab, n, diams, max(diams) if diams else 0.0, verdicts)


def translation_identity(kernel: ActionKernel, u_minus, u_plus, bump, grid_tol: float = 0.0) -> float:
    """Max deviation, on the support of ``bump``, of B_new - B_ref - bump where
    B_new uses one backward step with the bump added at the endpoint."""
    um = np.asarray(u_minus, float)
    up = np.asarray(u_plus, float)
    bump = np.asarray(bump, float)
    ref = lo_step(kernel, um, "backward")
    new = lo_step(kernel, um, "backward") + bump  # endpoint term of the modified kernel
    supp = np.abs(bump) > 0
    if not supp.any():
        return 0.0
    diff = (new - up) - (ref - up) - bump
    return float(np.abs(diff[supp]).max())


def modulus_check(samples, mask=None):
    """samples: list of (sigma, c, B) with B fields on a common grid.

    Fits C in |B - B'| <= C (sqrt|sigma - sigma'| + |c - c'|) over all pairs,
    and the exponent of the sigma dependence from the pairs formed with the
    first sample at equal c.
    """
    if len(samples) < 3:
        raise ValueError("need at least three parameter samples")
    C, xs, ys = 0.0, [], []
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            s1, c1, B1 = samples[i]
            s2, c2, B2 = samples[j]
            diff = np.abs(np.asarray(B1) - np.asarray(B2))
            if mask is not None:
                diff = diff[mask]
            D = float(diff.max())
            dc = float(np.linalg.norm(np.atleast_1d(np.asarray(c1, float) - np.asarray(c2, float))))
            ds = abs(s1 - s2)
            x = math.sqrt(ds) + dc
            if x > 0:
                C = max(C, D / x)
            if i == 0 and dc == 0 and ds > 0 and D > 0:
                xs.append(math.log(ds))
                ys.append(math.log(D))
    exponent = float(np.polyfit(xs, ys, 1)[0]) if len(xs) >= 2 else float("nan")
    return {"C": C, "sigma_exponent": exponent, "n_pairs": len(samples) * (len(samples) - 1) // 2}
