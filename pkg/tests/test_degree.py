import numpy as np

from widthforge.degree import check_degree
from widthforge.maps import Box, EvaluableMap, affine_map, identity_map


def test_identity_degree_one():
    rep = check_degree(identity_map([1, 2, 3]), probes=100, seed=0)
    assert rep.passed
    assert rep.method == "exact"
    assert rep.to_json()["degree_histogram"] == {"1": 100}


def test_reflection_degree_minus_one():
    m = affine_map(Box([0, 0, 0], [1, 1, 1]), np.diag([-1.0, 1, 1]), b=[1, 0, 0])
    rep = check_degree(m, probes=100, seed=0, expected=-1)
    assert rep.passed
    assert set(rep.degrees) == {-1}


def _fold_map():
    # x -> |2x - 1| style tent composed with a shear: two preimages of opposite sign
    dom = Box([0, 0], [1, 1])

    def f(X):
        return np.stack([np.abs(2 * X[:, 0] - 1), X[:, 1]], axis=1)

    def j(X):
        J = np.zeros((X.shape[0], 2, 2))
        J[:, 0, 0] = 2 * np.sign(2 * X[:, 0] - 1)
        J[:, 1, 1] = 1
        return J

    return EvaluableMap(dom, dom, f, j, lambda X: (X[:, 0] > 0.5).astype(int))


def test_newton_counts_signed_preimages():
    rep = check_degree(_fold_map(), probes=30, seed=1, expected=0)
    assert rep.method == "newton"
    assert rep.passed
    assert all(sorted(s) == [-1, 1] for s in rep.local_signs)


def test_fd_map_degree():
    dom = Box([0, 0], [1, 1])

    def f(X):
        return np.stack([X[:, 0] ** 2, X[:, 1] + 0.1 * X[:, 0]], axis=1)

    m = EvaluableMap(dom, Box([0, 0], [1, 1.1]), f)
    rep = check_degree(m, probes=30, seed=0, target=Box([0, 0.1], [1, 1]))
    assert rep.passed


def test_report_is_deterministic():
    a = check_degree(_fold_map(), probes=10, seed=4, expected=0).to_json()
    b = check_degree(_fold_map(), probes=10, seed=4, expected=0).to_json()
    assert a == b
