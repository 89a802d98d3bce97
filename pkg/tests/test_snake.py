import numpy as np
import pytest

from widthforge.bounds import Rectangle, lin_dilation
from widthforge.degree import check_degree
from widthforge.maps import Box, certify_k_dilation, lipschitz_estimate
from widthforge.planner import SNAKE_BUDGET
from widthforge.snake import (
    PreconditionError,
    build_snake,
    check_snake_hypotheses,
    snake_spec,
    snake_zero_set_check,
)


def thin_pair(eps):
    return Rectangle([eps, 1, 1]), Rectangle([eps, eps, 1 / eps])


@pytest.fixture(scope="module")
def snake025():
    R, S = thin_pair(0.25)
    return build_snake(R, S, 2)


def test_hypothesis_failure_names_inequality():
    with pytest.raises(PreconditionError, match=r"R2·R3 = 1 < S2·S3 = 2"):
        build_snake([1, 1, 1], [1, 1, 2], 2)


@pytest.mark.parametrize("R,S,k", [([1, 1], [1, 1], 1), ([1, 1, 1], [1, 1, 1], 3), ([1, 1, 1], [1, 1, 1], 1)])
def test_size_and_k_range(R, S, k):
    with pytest.raises(PreconditionError):
        check_snake_hypotheses(Rectangle(R), Rectangle(S), k)


def test_first_axes_must_agree():
    with pytest.raises(PreconditionError):
        build_snake([0.5, 1, 1], [0.25, 0.25, 4], 2)


def test_degenerate_snake_is_near_identity():
    m = build_snake([1, 2, 3], [1, 2, 3], 2)
    assert certify_k_dilation(m, 2, samples=1024).sup_estimate <= 1.05
    assert check_degree(m, probes=20).passed


def test_thin_pair_snake_structure(snake025):
    m = snake025
    assert len(m.stages) == 4
    assert m.spec.split == 1
    assert m.spec.bump.lipschitz <= 1.01 / m.spec.S.dims[1]
    cert = certify_k_dilation(m, 2, samples=4096, seed=0)
    assert cert.sup_estimate <= SNAKE_BUDGET
    assert cert.exterior_power_violations == 0
    assert cert.sup_estimate < lin_dilation(m.spec.R, m.spec.S, 2).value * SNAKE_BUDGET


def test_thin_pair_degree(snake025):
    rep = check_degree(snake025, probes=50, seed=0)
    assert rep.passed, rep.to_json()


def test_zero_set_check(snake025):
    rep = snake_zero_set_check(snake025.spec, samples=100_000, seed=0)
    assert rep.passed, rep.to_json()


def test_phi1_collapse_and_fix(snake025):
    spec = snake025.spec
    phi1 = snake025.stages[0]
    emb = spec.embedding
    rng = np.random.default_rng(0)
    central = Box.of(spec.S2).from_unit(rng.random((200, 2)))
    Yc = emb.forward(central)[0]
    xp = rng.random((200, 1)) * spec.R.dims[0]
    out = phi1(np.hstack([xp, Yc]))
    assert np.allclose(out[:, :1], xp)
    far = Box.of(spec.R2).from_unit(rng.random((4000, 2)))
    far = far[~emb.in_image(far, 1e-6)][:200]
    out = phi1(np.hstack([rng.random((far.shape[0], 1)) * spec.R.dims[0], far]))
    assert np.all(out[:, 0] == 0)
    assert np.allclose(out[:, 1:], far)


def test_stage_lipschitz_bounds(snake025):
    spec = snake025.spec
    phi1, phi2, phi3, phi4 = snake025.stages
    assert lipschitz_estimate(phi1, 4096) <= spec.phi1_lipschitz_bound()
    lip_inv = 1 / spec.embedding.sigma_range[0]
    assert lipschitz_estimate(phi3, 4096) <= 1.05 * max(1.0, lip_inv)
    assert lipschitz_estimate(phi4, 4096) <= 1 + 1e-12


def test_phi2_restricted_to_q_has_unit_dilation(snake025):
    spec = snake025.spec
    phi2 = snake025.stages[1]
    emb = spec.embedding
    rng = np.random.default_rng(1)
    inside = emb.forward(Box.of([1, 1]).from_unit(rng.random((3000, 2))) * (3 * np.array(spec.S2)) - np.array(spec.S2))[0]
    X = np.hstack([rng.random((inside.shape[0], 1)) * spec.R.dims[0], inside])
    J = phi2.jacobian(X)
    sv = np.linalg.svd(J, compute_uv=False)
    assert (sv[:, 0] * sv[:, 1]).max() <= 1 + 1e-6


@pytest.mark.parametrize("eps", [0.1, 0.05])
def test_budget_uniform_in_eps(eps):
    R, S = thin_pair(eps)
    spec = snake_spec(R, S, 2)
    assert spec.predicted_interior <= SNAKE_BUDGET
    assert lin_dilation(R, S, 2).value == pytest.approx(1 / eps)


def test_spec_json(snake025):
    js = snake025.spec.to_json()
    assert js["k"] == 2
    assert js["embedding"]["rows"] >= 1
