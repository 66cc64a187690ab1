"""Exact integer and rational arithmetic for resonance lattices.

Nothing in this module touches floating point.  Real inputs to
``dirichlet_approx`` are converted to their exact binary rational value first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence, Tuple

from .errors import BadShape, NotIrreducible, ZeroVector

IntVec = Tuple[int, int, int]
RatMat = Tuple[Tuple[Fraction, ...], ...]


def _as_intvec(k: Sequence[int]) -> IntVec:
    if len(k) != 3:
        raise BadShape(f"expected an integer 3-vector, got {k!r}")
    out = []
    for x in k:
        if isinstance(x, bool) or int(x) != x:
            raise BadShape(f"non-integer entry {x!r} in {k!r}")
        out.append(int(x))
    return tuple(out)


def totally_irreducible(k: Sequence[int]) -> bool:
    """Pairwise gcd test with gcd(a, 0) = |a| and gcd(0, 0) = 0."""
    k = _as_intvec(k)
    if k == (0, 0, 0):
        raise ZeroVector("k = 0 has no resonance")
    return all(math.gcd(k[i], k[j]) <= 1 for i in range(3) for j in range(i + 1, 3))


def canonical_sign(k: Sequence[int]) -> IntVec:
    """Flip k so that its first nonzero entry is positive."""
    k = _as_intvec(k)
    for x in k:
        if x != 0:
            return k if x > 0 else tuple(-y for y in k)
    return k


def det3(m: Sequence[Sequence]) -> Fraction:
    return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))


def matmul(a: Sequence[Sequence], b: Sequence[Sequence]) -> RatMat:
    return tuple(tuple(sum((a[i][k] * b[k][j] for k in range(3)), Fraction(0))
                       for j in range(3)) for i in range(3))


def transpose(a: Sequence[Sequence]) -> RatMat:
    return tuple(tuple(a[j][i] for j in range(3)) for i in range(3))


def inverse(a: Sequence[Sequence]) -> RatMat:
    """Exact inverse by the adjugate."""
    d = Fraction(det3(a))
    if d == 0:
        raise ValueError("singular matrix")
    cof = [[Fraction(0)] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            r = [x for x in range(3) if x != i]
            c = [y for y in range(3) if y != j]
            minor = a[r[0]][c[0]] * a[r[1]][c[1]] - a[r[0]][c[1]] * a[r[1]][c[0]]
            cof[i][j] = Fraction((-1) ** (i + j) * minor)
    return tuple(tuple(cof[j][i] / d for j in range(3)) for i in range(3))


def matvec(a: Sequence[Sequence], v: Sequence) -> Tuple[Fraction, ...]:
    return tuple(sum((Fraction(a[i][k]) * v[k] for k in range(3)), Fraction(0)) for i in range(3))


IDENTITY: RatMat = tuple(tuple(Fraction(int(i == j)) for j in range(3)) for i in range(3))


def ext_gcd(a: int, b: int) -> Tuple[int, int, int]:
    """Return (g, x, y) with a*x + b*y = g = gcd(a, b) >= 0."""
    x0, y0, x1, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    if a < 0:
        a, x0, y0 = -a, -x0, -y0
    return a, x0, y0


def _min_norm_solution(k1: int, k2: int) -> Tuple[int, int]:
    """Minimal-norm (a, b) with k1*b - k2*a = 1; ties broken by (|a|, |b|), then (a, b)."""
    g, x, y = ext_gcd(k1, -k2)  # k1*x - k2*y = g
    if g != 1:
        raise NotIrreducible(f"gcd({k1}, {k2}) = {g}")
    b0, a0 = x, y
    # general solution (a, b) = (a0 + t k1, b0 + t k2)
    n2 = k1 * k1 + k2 * k2
    t_star = Fraction(-(a0 * k1 + b0 * k2), n2)
    cands = []
    for t in range(math.floor(t_star) - 1, math.ceil(t_star) + 2):
        a, b = a0 + t * k1, b0 + t * k2
        cands.append((a * a + b * b, (abs(a), abs(b)), (a, b)))
    cands.sort()
    return cands[0][2]


@dataclass(frozen=True)
class UnimodularTriple:
    k_prime: IntVec
    k_star: IntVec
    k_extra: IntVec
    M0_t: Tuple[IntVec, IntVec, IntVec]  # columns (k', k*, k_extra)

    @property
    def M0(self) -> Tuple[IntVec, IntVec, IntVec]:
        return (self.k_prime, self.k_star, self.k_extra)

    @property
    def det(self) -> int:
        return int(det3(self.M0_t))


def unimodular_complete(k_prime: Sequence[int]) -> UnimodularTriple:
    """Complete k' to a unimodular basis whose first vector is k'."""
    k = _as_intvec(k_prime)
    if not totally_irreducible(k):
        raise NotIrreducible(f"{k} is not totally irreducible")
    nz = [i for i in range(3) if k[i] != 0]
    if len(nz) == 1:
        order = [nz[0]] + [i for i in range(3) if i != nz[0]]
    else:
        order = nz[:2] + [i for i in range(3) if i not in nz[:2]]
    kp = [k[i] for i in order]
    if len(nz) == 1:
        # permuted k' = (+-1, 0, 0)
        cols = [kp, [0, 1, 0], [0, 0, 1]]
    else:
        a, b = _min_norm_solution(kp[0], kp[1])
        cols = [kp, [a, b, 0], [0, 0, 1]]
    # undo the permutation on every column
    unperm = []
    for col in cols:
        v = [0, 0, 0]
        for pos, idx in enumerate(order):
            v[idx] = col[pos]
        unperm.append(tuple(v))
    kstar, kextra = unperm[1], unperm[2]
    m0t = tuple(tuple(unperm[c][r] for c in range(3)) for r in range(3))
    tri = UnimodularTriple(k, kstar, kextra, m0t)
    if abs(tri.det) != 1:
        raise AssertionError(f"completion of {k} has det {tri.det}")
    return tri


@dataclass(frozen=True)
class ShearTransform:
    kpp_bar: IntVec
    branch: int  # 1 if |k2| >= |k3| else 2
    M_t: RatMat
    M_inv: RatMat
    period_factor: int

    @property
    def M(self) -> RatMat:
        return transpose(self.M_t)

    @property
    def M_inv_t(self) -> RatMat:
        return transpose(self.M_inv)

    @property
    def off_diagonal(self) -> Fraction:
        return self.M_t[2][1] if self.branch == 1 else self.M_t[1][2]


def shear_transform(kpp_bar: Sequence[int]) -> ShearTransform:
    k = _as_intvec(kpp_bar)
    if k[0] != 0:
        raise BadShape(f"first entry of {k} must vanish")
    a, b = k[1], k[2]
    if (a, b) == (0, 0) or math.gcd(a, b) != 1:
        raise NotIrreducible(f"({a}, {b}) is not a primitive pair")
    one, zero = Fraction(1), Fraction(0)
    if abs(a) >= abs(b):
        r = Fraction(b, a)
        m_t = ((one, zero, zero), (zero, one, zero), (zero, r, one))
        m_inv = ((one, zero, zero), (zero, one, -r), (zero, zero, one))
        branch = 1
    else:
        r = Fraction(a, b)
        m_t = ((one, zero, zero), (zero, one, r), (zero, zero, one))
        m_inv = ((one, zero, zero), (zero, one, zero), (zero, -r, one))
        branch = 2
    return ShearTransform(k, branch, m_t, m_inv, max(abs(a), abs(b)))


def rational_period(omega: Sequence) -> int:
    """Least T >= 1 with T*omega integral."""
    fr = []
    for x in omega:
        if isinstance(x, float):
            raise TypeError("rational_period needs exact rationals, got a float")
        fr.append(Fraction(x))
    if all(x == 0 for x in fr):
        raise ZeroVector("omega = 0 has no period")
    t = 1
    for x in fr:
        t = t * x.denominator // math.gcd(t, x.denominator)
    return t


def dist_to_int(x: Fraction) -> Fraction:
    f = x - math.floor(x)
    return min(f, 1 - f)


def _convergent_denominators(x: Fraction):
    """Yield the denominators of the continued-fraction convergents of x."""
    q_prev, q = 0, 1
    yield 1
    r = x - math.floor(x)
    while r != 0:
        r = 1 / r
        a = math.floor(r)
        r -= a
        q_prev, q = q, a * q + q_prev
        yield q


def dirichlet_approx(omega, K) -> int:
    """Least integer 1 <= k < K with ||k omega||_Z <= 1/K."""
    w = Fraction(omega)
    kk = Fraction(K)
    if kk <= 1:
        raise ValueError("K must exceed 1")
    bound = 1 / kk
    found = None
    for q in _convergent_denominators(w):
        if q >= kk:
            break
        if dist_to_int(q * w) <= bound:
            found = q
            break
    if found is not None:
        # the minimal k is a best approximation, hence a convergent; confirm below it
        for k in range(1, min(found, 64)):
            if dist_to_int(k * w) <= bound:
                found = k
                break
    else:
        k = 1
        while k < kk:
            if dist_to_int(k * w) <= bound:
                found = k
                break
            k += 1
    if found is None or not (1 <= found < kk) or dist_to_int(found * w) > bound:
        raise AssertionError(f"Dirichlet bound violated for omega={omega}, K={K}")
    return found


def primitive_pairs(n_max: int):
    """Primitive (a, b) with max(|a|, |b|) <= n_max, first nonzero entry positive."""
    out = []
    for a in range(0, n_max + 1):
        for b in range(-n_max, n_max + 1):
            if (a, b) == (0, 0) or math.gcd(a, b) != 1:
                continue
            if a == 0 and b < 0:
                continue
            out.append((a, b))
    out.sort(key=lambda ab: (max(abs(ab[0]), abs(ab[1])), ab))
    return out


def irreducible_vectors(n_max: int):
    """Totally irreducible k with |k|_inf <= n_max in canonical sign, sorted by norm."""
    out = set()
    rng = range(-n_max, n_max + 1)
    for k in ((a, b, c) for a in rng for b in rng for c in rng):
        if k == (0, 0, 0):
            continue
        if totally_irreducible(k):
            out.add(canonical_sign(k))
    return sorted(out, key=lambda k: (k[0] ** 2 + k[1] ** 2 + k[2] ** 2, tuple(-x for x in k)))


__all__ = [
    "UnimodularTriple", "ShearTransform", "totally_irreducible", "unimodular_complete",
    "shear_transform", "rational_period", "dirichlet_approx", "dist_to_int",
    "canonical_sign", "primitive_pairs", "irreducible_vectors", "matmul", "transpose",
    "inverse", "matvec", "det3", "IDENTITY", "ext_gcd",
]
