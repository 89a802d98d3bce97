import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from widthforge import kernels

BACKENDS = kernels.backends()
needs_cython = pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")


def _shoelace(poly, n):
    p = poly[:n]
    u, v = p[:, 0], p[:, 1]
    return 0.5 * abs(np.dot(u, np.r_[v[1:], v[:1]]) - np.dot(v, np.r_[u[1:], u[:1]]))


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_singular_values_match_lapack(name):
    rng = np.random.default_rng(0)
    for n in range(1, 7):
        A = rng.normal(size=(50, n, n))
        got = BACKENDS[name].singular_values(A)
        assert np.allclose(got, np.linalg.svd(A, compute_uv=False), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_singular_values_of_rank_deficient(name):
    A = np.array([[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 0.0]]])
    sv = BACKENDS[name].singular_values(A)[0]
    assert sv[0] == pytest.approx(np.sqrt(70.0)) and sv[1] == pytest.approx(0.0, abs=1e-12)


@needs_cython
@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 6)).map(lambda s: (s[0], s[1], s[1])),
              elements=st.floats(-1e3, 1e3)))
def test_backends_agree_on_singular_values(A):
    a = BACKENDS["python"].singular_values(A)
    b = BACKENDS["cython"].singular_values(A)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-9 * max(1.0, np.abs(A).max()))


def _random_simplices(rng, ntri, d):
    V = rng.normal(size=(ntri, d + 1, d))
    origin = V[:, 0]
    E = np.transpose(V[:, 1:] - origin[:, None], (0, 2, 1))
    return np.linalg.inv(E), origin


@needs_cython
@pytest.mark.parametrize("d", [2, 3, 4])
def test_backends_agree_on_locate(d):
    rng = np.random.default_rng(d)
    inv, origin = _random_simplices(rng, 40, d)
    P = rng.normal(size=(500, d))
    i1, b1 = kernels.backends()["python"].locate_simplices(P, inv, origin, 1e-12)
    i2, b2 = kernels.backends()["cython"].locate_simplices(P, inv, origin, 1e-12)
    assert np.array_equal(i1, i2)
    assert np.allclose(b1, b2, atol=1e-12)
    hit = i1 >= 0
    assert hit.any() and np.allclose(b1[hit].sum(axis=1), 1.0)


@needs_cython
def test_backends_agree_on_clipping():
    rng = np.random.default_rng(5)
    coef = rng.normal(size=(300, 4, 3))
    p1, c1 = BACKENDS["python"].clip_halfplanes(coef, 2.0)
    p2, c2 = BACKENDS["cython"].clip_halfplanes(coef, 2.0)
    assert np.array_equal(c1, c2)
    assert np.allclose(p1, p2, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_clip_half_square(name):
    poly, counts = BACKENDS[name].clip_halfplanes(np.array([[[0.0, 1.0, 0.0]]]), 1.0)
    assert counts[0] == 4 and _shoelace(poly[0], 4) == pytest.approx(2.0)
    poly, counts = BACKENDS[name].clip_halfplanes(np.array([[[-5.0, 1.0, 0.0]]]), 1.0)
    assert counts[0] == 0


def test_dispatch_reports_backend():
    assert kernels.BACKEND in BACKENDS
    assert np.allclose(kernels.topk_product(np.diag([3.0, 2.0, 1.0])[None], 2), [6.0])
    assert np.allclose(kernels.topk_product(np.eye(2)[None], 0), [1.0])
