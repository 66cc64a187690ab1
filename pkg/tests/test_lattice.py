import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from resweb.errors import BadShape, NotIrreducible, ZeroVector
from resweb.lattice import (
    det3,
    dirichlet_approx,
    dist_to_int,
    ext_gcd,
    inverse,
    matmul,
    rational_period,
    shear_transform,
    totally_irreducible,
    unimodular_complete,
)

I3 = tuple(tuple(Fraction(int(i == j)) for j in range(3)) for i in range(3))


@pytest.mark.parametrize("k,expected", [((2, 3, 5), True), ((2, 4, 5), False), ((1, 0, 0), True),
                                        ((0, 2, 0), False), ((0, 3, 5), False), ((0, 1, -1), True)])
def test_totally_irreducible_examples(k, expected):
    assert totally_irreducible(k) is expected


def test_completion_of_unit_vector_is_identity():
    tri = unimodular_complete((1, 0, 0))
    assert tri.M0_t == ((1, 0, 0), (0, 1, 0), (0, 0, 1))


def test_completion_of_ones():
    tri = unimodular_complete((1, 1, 1))
    assert tri.k_star == (0, 1, 0)
    assert tri.k_extra == (0, 0, 1)
    # independent determinant of [[1,0,0],[1,1,0],[1,0,1]]
    assert tri.det == 1


def test_completion_357_against_ext_gcd_oracle():
    tri = unimodular_complete((3, 5, 7))
    assert tri.k_extra == (0, 0, 1)
    a, b, _ = tri.k_star
    assert 3 * b - 5 * a == 1
    assert (a, b) == (1, 2)
    g, x, y = ext_gcd(3, 5)
    assert g == 1 and 3 * x + 5 * y == 1
    assert abs(tri.det) == 1


def test_completion_rejects_reducible():
    with pytest.raises(NotIrreducible):
        unimodular_complete((2, 4, 5))
    with pytest.raises(ZeroVector):
        totally_irreducible((0, 0, 0))


def test_completion_permuted_pattern():
    tri = unimodular_complete((0, 1, -1))
    assert tri.k_prime == (0, 1, -1)
    assert abs(tri.det) == 1


irreducible = st.tuples(*[st.integers(-50, 50)] * 3).filter(
    lambda k: k != (0, 0, 0) and totally_irreducible(k)
)


@given(irreducible)
def test_completion_det_is_unit(k):
    tri = unimodular_complete(k)
    assert tri.k_prime == k
    cols = tri.M0_t
    assert abs(det3(cols)) == 1
    assert [row[0] for row in cols] == list(k)


def test_shear_example_one_minus_one():
    s = shear_transform((0, 1, -1))
    assert s.branch == 1
    assert s.M_t == ((1, 0, 0), (0, 1, 0), (0, -1, 1))


def test_shear_identity_for_axis():
    s = shear_transform((0, 1, 0))
    assert s.off_diagonal == 0
    assert s.M_t == I3


def test_shear_second_branch():
    s = shear_transform((0, 2, 5))
    assert s.branch == 2
    assert s.off_diagonal == Fraction(2, 5)
    assert matmul(s.M_t, s.M_inv_t) == I3


def test_shear_rejects_bad_input():
    with pytest.raises(BadShape):
        shear_transform((1, 1, 0))
    with pytest.raises(NotIrreducible):
        shear_transform((0, 2, 4))


pairs = st.tuples(st.integers(-40, 40), st.integers(-40, 40)).filter(
    lambda ab: ab != (0, 0) and math.gcd(*ab) == 1
)


@given(pairs)
def test_shear_roundtrip_exact(ab):
    s = shear_transform((0,) + ab)
    assert matmul(s.M_t, s.M_inv_t) == I3
    assert matmul(s.M, s.M_inv) == I3
    assert inverse(s.M_t) == s.M_inv_t
    assert s.period_factor == max(abs(ab[0]), abs(ab[1]))


@pytest.mark.parametrize("omega,T", [((0, Fraction(1, 2), Fraction(1, 4)), 4), ((0, 1, 1), 1),
                                     ((0, Fraction(2, 3), Fraction(1, 2)), 6)])
def test_rational_period(omega, T):
    assert rational_period(omega) == T
    # brute-force oracle: least T with T*omega integral
    assert min(t for t in range(1, 50) if all((t * Fraction(x)).denominator == 1 for x in omega)) == T


def test_rational_period_errors():
    with pytest.raises(ZeroVector):
        rational_period((0, 0, 0))
    with pytest.raises(TypeError):
        rational_period((0.5, 0, 0))


def _brute_dirichlet(w, K):
    return next(k for k in range(1, math.ceil(K)) if dist_to_int(k * w) <= 1 / Fraction(K))


def test_dirichlet_exact_rational():
    k = dirichlet_approx(Fraction(1, 3), 4)
    assert k == 3 and dist_to_int(3 * Fraction(1, 3)) == 0


@pytest.mark.parametrize("omega,K,k_expected,dist", [(math.sqrt(2) - 1, 10, 5, 0.0711),
                                                     (math.pi - 3, 100, 7, 0.00885)])
def test_dirichlet_irrational_examples(omega, K, k_expected, dist):
    k = dirichlet_approx(omega, K)
    assert k == k_expected == _brute_dirichlet(Fraction(omega), K)
    assert float(dist_to_int(k * Fraction(omega))) == pytest.approx(dist, abs=1e-4)


@given(st.fractions(min_value=-3, max_value=3, max_denominator=10**6), st.integers(2, 400))
def test_dirichlet_bound_holds(w, K):
    k = dirichlet_approx(w, K)
    assert 1 <= k < K
    assert dist_to_int(k * w) <= Fraction(1, K)
    assert k == _brute_dirichlet(w, K)


def test_dirichlet_rejects_small_K():
    with pytest.raises(ValueError):
        dirichlet_approx(0.3, 1)
