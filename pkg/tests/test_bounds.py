import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from widthforge.bounds import (
    DomainError,
    Rectangle,
    BoundReport,
    UnsupportedSizeError,
    dilation_lower_bound,
    lin_dilation,
    packing_width,
    subset_width_bound,
    thm2_lower_bound,
    width_bounds,
)

sides = st.floats(min_value=0.05, max_value=20.0, allow_nan=False)


def rect(n):
    return st.lists(sides, min_size=n, max_size=n).map(Rectangle)


def test_rectangle_sorts_and_records_order():
    R = Rectangle([3, 1, 2])
    assert R.dims == (1.0, 2.0, 3.0)
    assert R.order == (1, 2, 0)
    assert Rectangle.from_json({"dims": [2, 1]}) == Rectangle([1, 2])


@pytest.mark.parametrize("bad", [[], [0, 1], [-1], [float("inf")], [float("nan")]])
def test_rectangle_rejects(bad):
    with pytest.raises(DomainError):
        Rectangle(bad)


@pytest.mark.parametrize(
    "dims,k,expected",
    [((1, 1, 1), 2, 1.0), ((1, 2, 3), 2, 2.0), ((0.5, 4), 1, 0.5)],
)
def test_width_bounds(dims, k, expected):
    lo, hi, lo_status, hi_status = width_bounds(Rectangle(dims), k)
    assert lo == pytest.approx(expected) and hi == pytest.approx(expected)
    assert lo_status == "up_to_c_of_n" and hi_status == "exact"


def test_width_bounds_k_range():
    with pytest.raises(DomainError):
        width_bounds(Rectangle((1, 2)), 3)
    with pytest.raises(DomainError):
        width_bounds(Rectangle((1, 2)), 0)


def test_subset_width_unit_cube():
    rep = subset_width_bound(Rectangle((1, 1, 1)), 2, 1.0)
    assert rep.value == pytest.approx(1.0)
    assert all(v == pytest.approx(1.0) for _, v in rep.monomials)


def test_subset_width_l1_monomial_n3():
    R = Rectangle((0.3, 2, 5))
    V = 0.7
    rep = subset_width_bound(R, 2, V)
    assert dict(rep.monomials)[1] == pytest.approx(math.sqrt(0.3) * math.sqrt(V), rel=1e-12)


def test_subset_width_small_volume():
    rep = subset_width_bound(Rectangle((1, 10, 10)), 2, 0.001)
    assert rep.value == pytest.approx(0.01, rel=1e-12)
    assert rep.argmax_or_argmin_l == 0


@given(rect(4), st.integers(1, 4), st.floats(0.01, 100))
def test_subset_width_endpoints(R, k, V):
    m = dict(subset_width_bound(R, k, V).monomials)
    assert m[0] == pytest.approx(V ** (k / 4), rel=1e-12)
    assert m[k] == pytest.approx(width_bounds(R, k).upper, rel=1e-12)


def test_packing_width_examples():
    assert packing_width(Rectangle((1, 1, 1)), 2, 1).value == pytest.approx(1.0)
    rep = packing_width(Rectangle((1, 1, 1)), 2, 8)
    assert rep.value == pytest.approx(0.25) and rep.argmax_or_argmin_l == 0


def test_packing_width_long_box():
    # frozen from a direct sweep over l: (4.6416, 3.1623, 1.0)
    rep = packing_width(Rectangle((1, 1, 100)), 2, 10)
    m = dict(rep.monomials)
    assert m[0] == pytest.approx(10 ** (2 / 3), rel=1e-12)
    assert m[1] == pytest.approx(math.sqrt(10), rel=1e-12)
    assert m[2] == pytest.approx(1.0, rel=1e-12)
    assert rep.value == pytest.approx(1.0) and rep.argmax_or_argmin_l == 2


@given(rect(3), st.integers(1, 3))
def test_packing_width_one_piece_below_width(R, k):
    assert packing_width(R, k, 1).value <= width_bounds(R, k).upper * (1 + 1e-12)


def test_packing_width_rejects_bad_n():
    with pytest.raises(DomainError):
        packing_width(Rectangle((1, 1)), 1, 0)


def test_dilation_lower_identity_and_homothety():
    R = Rectangle((1, 2, 3))
    assert dilation_lower_bound(R, R, 2).value == pytest.approx(1.0)
    rep = dilation_lower_bound(Rectangle((1, 1, 1)), Rectangle((2, 2, 2)), 2)
    assert rep.value == pytest.approx(4.0)
    assert rep.argmax_or_argmin_l == 0  # all tie, smallest l wins


def test_dilation_lower_n3_k2_family():
    R, S = Rectangle((1, 2, 3)), Rectangle((2, 3, 7))
    Q = [2.0, 1.5, 7 / 3]
    m = dict(dilation_lower_bound(R, S, 2).monomials)
    assert m[0] == pytest.approx((Q[0] * Q[1] * Q[2]) ** (2 / 3), rel=1e-12)
    assert m[1] == pytest.approx(Q[0] * math.sqrt(Q[1] * Q[2]), rel=1e-12)
    assert m[2] == pytest.approx(Q[0] * Q[1], rel=1e-12)


def test_dilation_lower_dimension_mismatch():
    with pytest.raises(DomainError):
        dilation_lower_bound(Rectangle((1, 2)), Rectangle((1, 2, 3)), 1)


def test_dilation_estimate_examples():
    R = Rectangle((1, 2, 3))
    assert thm2_lower_bound(R, R).value == pytest.approx(1.0)
    rep = thm2_lower_bound(Rectangle((0.1, 1, 1)), Rectangle((0.1, 0.1, 10)))
    assert rep.quotients == pytest.approx([1, 0.1, 10])
    assert [v for _, v in rep.monomials] == pytest.approx([1.0, 0.1, 1.0])
    assert rep.value == pytest.approx(1.0)
    rep = thm2_lower_bound(Rectangle((1, 1, 1)), Rectangle((1, 1, 4)))
    assert [v for _, v in rep.monomials] == pytest.approx([2.0, 1.0, 4.0])
    assert rep.argmax_or_argmin_l == 3


@given(rect(3), rect(3))
def test_dilation_estimate_n3_set(R, S):
    Q = [s / r for r, s in zip(R.dims, S.dims)]
    got = sorted(v for _, v in thm2_lower_bound(R, S).monomials)
    want = sorted([Q[0] * math.sqrt(Q[1] * Q[2]), Q[0] * Q[1], Q[1] * Q[2]])
    assert got == pytest.approx(want, rel=1e-12)


@given(rect(4), rect(4), st.floats(0.1, 10))
def test_dilation_estimate_homogeneity(R, S, t):
    a = thm2_lower_bound(R, S.scaled(t)).value
    b = thm2_lower_bound(R, S).value
    assert a == pytest.approx(t**3 * b, rel=1e-12)


@given(rect(3), rect(3), st.integers(0, 2), st.floats(1.0, 3.0))
def test_monotone_in_S(R, S, i, f):
    dims = list(S.dims)
    dims[i] *= f
    S2 = Rectangle(dims)
    assert thm2_lower_bound(R, S2).value >= thm2_lower_bound(R, S).value * (1 - 1e-12)
    for k in (1, 2, 3):
        assert dilation_lower_bound(R, S2, k).value >= dilation_lower_bound(R, S, k).value * (1 - 1e-12)


def test_lin_dilation_examples():
    R = Rectangle((1, 2, 3))
    rep = lin_dilation(R, R, 2)
    assert rep.value == pytest.approx(1.0) and rep.perm == [0, 1, 2]
    rep = lin_dilation(Rectangle((0.1, 1, 1)), Rectangle((0.1, 0.1, 10)), 2)
    assert rep.value == pytest.approx(10.0)
    # both inputs sort to (1, 2); identity bijection, factor 1
    assert lin_dilation(Rectangle((1, 2)), Rectangle((2, 1)), 1).value == pytest.approx(1.0)


def test_lin_dilation_homothety():
    R = Rectangle((1, 3, 4))
    for k in (1, 2, 3):
        assert lin_dilation(R, R.scaled(2.0), k).value == pytest.approx(2.0**k)
        assert dilation_lower_bound(R, R.scaled(2.0), k).value == pytest.approx(2.0**k)


def _lin_oracle(R, S, k):
    # max over k-subsets instead of sorting, in reversed permutation order
    n = R.n
    best = math.inf
    for perm in reversed(list(itertools.permutations(range(n)))):
        worst = max(
            math.prod(S.dims[perm[i]] / R.dims[i] for i in A)
            for A in itertools.combinations(range(n), k)
        )
        best = min(best, worst)
    return best


@settings(max_examples=60)
@given(st.integers(1, 5).flatmap(lambda n: st.tuples(rect(n), rect(n), st.integers(1, n))))
def test_lin_dilation_oracle(args):
    R, S, k = args
    assert lin_dilation(R, S, k).value == pytest.approx(_lin_oracle(R, S, k), rel=1e-12)


def test_lin_dilation_size_limit():
    R = Rectangle(range(1, 12))
    with pytest.raises(UnsupportedSizeError):
        lin_dilation(R, R, 2)


def test_n1_edge():
    R, S = Rectangle((2,)), Rectangle((3,))
    assert dilation_lower_bound(R, S, 1).value == pytest.approx(1.5)
    assert lin_dilation(R, S, 1).value == pytest.approx(1.5)


def test_report_json_roundtrip():
    rep = thm2_lower_bound(Rectangle((1, 2, 3)), Rectangle((2, 2, 2)))
    back = BoundReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()
