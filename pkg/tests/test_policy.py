import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rebalance_bc.core import DomainError
from rebalance_bc.policy import (LinearGaussianPolicy, MlpPolicy, get_params, grad_nll, load_policy,
                                 nll, nll_constant, save_policy, set_params)
from rebalance_bc.suites import policy_grad_errors

HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def test_nll_examples():
    pol = LinearGaussianPolicy([[2.0]])
    s = np.array([[1.5]])
    assert nll(pol, s, [[3.0]])[0] == pytest.approx(HALF_LOG_2PI)
    assert HALF_LOG_2PI == pytest.approx(0.9189, abs=1e-4)
    assert nll(pol, s, [[4.0]])[0] == pytest.approx(0.5 + HALF_LOG_2PI)


def test_noiseless_group_hits_constant():
    s = np.linspace(-1, 1, 11)[:, None]
    pol = LinearGaussianPolicy([[-0.7]], sigma=0.5)
    per = nll(pol, s, -0.7 * s)
    assert np.all(per == nll_constant(pol))
    assert np.all(grad_nll(pol, s, -0.7 * s) == 0)


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        nll(LinearGaussianPolicy(np.zeros((2, 3))), np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(DomainError):
        grad_nll(LinearGaussianPolicy([[1.0]]), np.zeros((0, 1)), np.zeros((0, 1)))


def test_mlp_gradient_check():
    assert max(policy_grad_errors(n_instances=20, seed=1)) < 1e-4


def test_linear_gradient_check():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d_s, d_a = rng.integers(1, 4, size=2)
        pol = LinearGaussianPolicy(rng.normal(size=(d_a, d_s)), sigma=rng.uniform(0.5, 2))
        S, A = rng.normal(size=(15, d_s)), rng.normal(size=(15, d_a))
        g = grad_nll(pol, S, A)
        p, h = pol.params, 1e-5
        fd = np.array([(nll(pol.with_params(p + h * e), S, A).mean()
                        - nll(pol.with_params(p - h * e), S, A).mean()) / (2 * h)
                       for e in np.eye(p.size)])
        assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(g), 1e-12)


def test_mlp_architecture():
    pol = MlpPolicy.create(2, 3)
    assert pol.sizes == [2, 32, 32, 3]
    assert pol.n_params == (2 * 32 + 32) + (32 * 32 + 32) + (32 * 3 + 3)
    assert np.all(np.isfinite(pol.mean(np.full((4, 2), 1e6))))


@given(st.integers(0, 2 ** 31), st.integers(0, 100))
@settings(max_examples=30)
def test_params_round_trip(seed, j):
    pol = MlpPolicy.create(2, 2, (5,), seed=seed)
    p = get_params(pol)
    assert np.array_equal(get_params(set_params(pol, p)), p)
    with pytest.raises(DomainError):
        set_params(pol, p[:-1])


def test_single_parameter_path():
    # the last output bias only moves its own action coordinate
    pol = MlpPolicy.create(2, 2, (4,), seed=0)
    s = np.random.default_rng(0).normal(size=(5, 2))
    p = pol.params.copy()
    p[-1] += 1e-3
    diff = pol.with_params(p).mean(s) - pol.mean(s)
    np.testing.assert_allclose(diff[:, 1], 1e-3, atol=1e-15)
    assert np.all(diff[:, 0] == 0)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=25)
def test_nll_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    pol = MlpPolicy.create(2, 2, (4,), seed=seed)
    S, A = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    perm = rng.permutation(12)
    assert nll(pol, S, A).mean() == pytest.approx(nll(pol, S[perm], A[perm]).mean(), abs=1e-12)
    np.testing.assert_allclose(grad_nll(pol, S, A), grad_nll(pol, S[perm], A[perm]), atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    for pol in (LinearGaussianPolicy([[1.0, 2.0], [3.0, 4.0]], 0.5),
                MlpPolicy.create(2, 2, (3,), sigma=0.7, seed=4)):
        save_policy(pol, tmp_path / "p.json")
        back = load_policy(tmp_path / "p.json")
        assert back.sigma == pol.sigma and np.array_equal(back.params, pol.params)


def test_linear_does_not_alias_caller_array():
    theta = np.array([[1.0]])
    LinearGaussianPolicy(theta)
    theta[0, 0] = 2.0  # still writable
