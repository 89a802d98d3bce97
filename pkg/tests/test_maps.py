import numpy as np
import pytest

from widthforge.bounds import DomainError, Rectangle, lin_dilation
from widthforge.maps import (
    Box,
    CreaseError,
    EvaluableMap,
    affine_map,
    certify_k_dilation,
    compose,
    compose_all,
    diagonal_map,
    exterior_power_violations,
    identity_map,
    k_dilation_at,
    linear_between,
    sobol_points,
    topk,
)


def frame_oracle(A, k, frames, rng):
    """Best |det| of A restricted to random orthonormal k-frames (a lower bound)."""
    n = A.shape[0]
    G = rng.normal(size=(frames, n, k))
    Q, _ = np.linalg.qr(G)
    AQ = A @ Q
    gram = np.einsum("fij,fik->fjk", AQ, AQ)
    return float(np.sqrt(np.abs(np.linalg.det(gram))).max())


def test_linear_between_identity():
    m = linear_between([1, 2, 3], [1, 2, 3])
    X = np.array([[0.3, 1.1, 2.9]])
    assert np.allclose(m(X), X)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_linear_between_homothety(k):
    m = linear_between([1, 1, 1], [2, 2, 2])
    assert k_dilation_at(m, [0.2, 0.5, 0.7], k) == pytest.approx(2.0**k)


def test_linear_between_swap():
    m = linear_between([1, 2], [2, 1], perm=[1, 0])
    J = m.jacobian(np.array([0.5, 0.5]))
    assert sorted(np.abs(J[J != 0])) == pytest.approx([0.5, 2.0])
    assert k_dilation_at(m, [0.5, 0.5], 1) == pytest.approx(2.0)


def test_linear_between_matches_lin_inner_max():
    R, S = Rectangle([0.5, 1.0, 3.0]), Rectangle([0.2, 2.0, 2.5])
    m = linear_between(R, S)
    factors = sorted((np.array(S.dims) / np.array(R.dims)), reverse=True)
    assert k_dilation_at(m, [0.1, 0.1, 0.1], 2) == pytest.approx(factors[0] * factors[1])
    assert lin_dilation(R, S, 2).value <= factors[0] * factors[1] + 1e-12


def test_linear_between_rejects_bad_perm():
    with pytest.raises(DomainError):
        linear_between([1, 2], [1, 2], perm=[0, 0])


@pytest.mark.parametrize("n", [2, 3, 4])
def test_svd_frame_oracle(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        A = rng.normal(size=(n, n))
        m = affine_map(Box.of(Rectangle([1] * n)), A)
        for k in range(1, n + 1):
            val = k_dilation_at(m, [0.5] * n, k)
            best = frame_oracle(A, k, 20000, rng)
            assert val >= best * (1 - 1e-9)
            assert val <= best * 1.05


def test_exterior_power_inequality_on_random_jacobians():
    rng = np.random.default_rng(0)
    J = rng.normal(size=(500, 5, 5)) * np.exp(rng.normal(size=(500, 1, 1)))
    sv = np.linalg.svd(J, compute_uv=False)
    for k in range(1, 5):
        assert exterior_power_violations(sv, k) == 0


def test_exterior_power_detects_fake_spectra():
    # singular values in increasing order break the inequality
    sv = np.array([[1.0, 2.0, 4.0]])
    assert exterior_power_violations(sv, 1) > 0


def test_topk_matches_numpy():
    rng = np.random.default_rng(1)
    J = rng.normal(size=(20, 4, 4))
    s = np.linalg.svd(J, compute_uv=False)
    assert np.allclose(topk(J, 2), s[:, 0] * s[:, 1])


def test_linear_dilation_point_independent():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(3, 3))
    m = affine_map(Box.of(Rectangle([1, 2, 3])), A)
    vals = [k_dilation_at(m, x, 2) for x in rng.random((10, 3)) * [1, 2, 3]]
    assert np.ptp(vals) <= 1e-12 * max(vals)


def test_compose_chain_rule_and_fd_mode():
    R = Rectangle([1, 1])
    inner = diagonal_map(R, [2, 3])

    def f(X):
        return np.stack([X[:, 0] + 0.1 * X[:, 1] ** 2, X[:, 1]], axis=1)

    outer = EvaluableMap(Box([0, 0], [2, 3]), Box([0, 0], [3, 3]), f)
    assert outer.jacobian_mode == "finite_difference"
    m = compose(outer, inner)
    x = np.array([0.5, 0.5])
    J = m.jacobian(x)
    expect = np.array([[2.0, 0.2 * 1.5 * 3], [0.0, 3.0]])
    assert np.allclose(J, expect, atol=1e-6)


def test_compose_rejects_mismatched_boxes():
    a = diagonal_map([1, 1], [5, 5])
    b = identity_map([1, 1])
    with pytest.raises(DomainError):
        compose(b, a)


def test_compose_all_order():
    a = diagonal_map([1, 1], [2, 1])
    b = affine_map(Box([0, 0], [2, 1]), np.eye(2), b=[1, 0])
    m = compose_all([a, b])
    assert np.allclose(m(np.array([0.5, 0.5])), [2.0, 0.5])


def test_submultiplicativity_on_linear_pairs():
    rng = np.random.default_rng(4)
    for _ in range(10):
        A, B = rng.normal(size=(2, 3, 3))
        a = affine_map(Box.of(Rectangle([1, 1, 1])), A)
        b = affine_map(a.codomain_hint, B)
        m = compose(b, a)
        for k in (1, 2, 3):
            ca = certify_k_dilation(a, k, samples=64).sup_estimate
            cb = certify_k_dilation(b, k, samples=64).sup_estimate
            cm = certify_k_dilation(m, k, samples=64).sup_estimate
            assert cm <= 1.02 * ca * cb


def _abs_map():
    dom = Box([-1, -1], [1, 1])

    def f(X):
        return np.stack([np.abs(X[:, 0]), X[:, 1]], axis=1)

    def j(X):
        J = np.zeros((X.shape[0], 2, 2))
        J[:, 0, 0] = np.sign(X[:, 0])
        J[:, 1, 1] = 1
        return J

    return EvaluableMap(dom, Box([0, -1], [1, 1]), f, j, lambda X: (X[:, 0] > 0).astype(int))


def test_crease_error_and_rejection():
    m = _abs_map()
    with pytest.raises(CreaseError):
        k_dilation_at(m, [0.0, 0.3], 1)
    assert k_dilation_at(m, [0.2, 0.3], 1) == pytest.approx(1.0)
    cert = certify_k_dilation(m, 2, samples=1024, seed=0)
    assert cert.near_crease_count > 0
    assert cert.sup_estimate == pytest.approx(1.0)
    assert cert.exterior_power_violations == 0


def test_certificate_monotone_in_samples():
    rng = np.random.default_rng(5)

    def f(X):
        return np.stack([X[:, 0] * (1 + X[:, 1] ** 2), X[:, 1]], axis=1)

    m = EvaluableMap(Box([0, 0], [1, 1]), Box([0, 0], [2, 1]), f)
    small = certify_k_dilation(m, 1, samples=256, seed=0, crease_fraction=0)
    extra = rng.random((256, 2))
    big = certify_k_dilation(m, 1, samples=256, seed=0, crease_fraction=0, extra_points=extra)
    assert big.sup_estimate >= small.sup_estimate
    assert small.sample_count == 256
    assert big.sup_estimate <= np.linalg.norm([[2.0, 2.0], [0.0, 1.0]], 2) + 1e-6


def test_certificate_invariants_and_determinism():
    m = _abs_map()
    a = certify_k_dilation(m, 1, samples=2000, seed=3).to_json()
    b = certify_k_dilation(m, 1, samples=2000, seed=3).to_json()
    assert a == b
    assert a["sup_estimate"] >= max(v for _, v in a["quantiles"])


def test_sobol_points_deterministic():
    assert np.array_equal(sobol_points(3, 100, 7), sobol_points(3, 100, 7))
    assert sobol_points(3, 100, 7).shape == (100, 3)
