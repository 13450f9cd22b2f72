import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rebalance_bc.core import (DeltaReport, DomainError, LabeledDataset, StateActionPair, WeightVector,
                               concat, empirical_proportions, exact_proportions, kl_gaussian,
                               load_dataset, normalize_states, save_dataset, simplex_eg_step,
                               simplex_project_step)


def make(counts, dim=1, seed=0):
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(len(counts)), counts)
    n = len(groups)
    return LabeledDataset(rng.normal(size=(n, dim)), rng.normal(size=(n, dim)), groups, len(counts))


# kl_gaussian

def test_kl_examples():
    assert kl_gaussian(0, 1, 0, 1) == 0
    assert kl_gaussian(0, 1, 1, 1) == pytest.approx(0.5, abs=1e-15)
    assert kl_gaussian(0, 1, 0, 2) == pytest.approx(math.log(2) + 1 / 8 - 1 / 2, abs=1e-15)
    assert kl_gaussian(0, 1, 0, 2) == pytest.approx(0.31815, abs=1e-5)


@pytest.mark.parametrize("s1,s2", [(0, 1), (1, -1), (-2, 1)])
def test_kl_rejects_bad_sigma(s1, s2):
    with pytest.raises(DomainError):
        kl_gaussian(0, s1, 0, s2)


finite = st.floats(-50, 50, allow_nan=False)
pos = st.floats(0.05, 20)


@given(finite, pos, finite, pos)
def test_kl_nonnegative(m1, s1, m2, s2):
    kl = kl_gaussian(m1, s1, m2, s2)
    assert kl >= -1e-12
    if m1 == m2 and s1 == s2:
        assert kl == 0


@given(finite, pos, st.floats(1e-3, 10), st.sampled_from([0, 1]))
def test_kl_positive_when_different(m, s, d, which):
    kl = kl_gaussian(m, s, m + d, s) if which else kl_gaussian(m, s, m, s * (1 + d))
    assert kl > 0


# LabeledDataset

def test_dataset_validation():
    with pytest.raises(DomainError):
        LabeledDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.array([0, 2]), 2)
    with pytest.raises(DomainError):
        LabeledDataset(np.zeros((2, 1)), np.zeros((3, 1)), np.array([0, 1]), 2)
    with pytest.raises(DomainError):
        LabeledDataset(np.zeros((2, 1)), np.zeros((2, 1)), np.array([0.5, 1.0]), 2)


def test_dataset_is_read_only():
    ds = make([2, 3])
    with pytest.raises(ValueError):
        ds.states[0, 0] = 1.0


def test_from_pairs_round_trip():
    ds = make([2, 3], dim=2)
    back = LabeledDataset.from_pairs(list(ds), 2)
    assert np.array_equal(back.states, ds.states)
    assert np.array_equal(back.groups, ds.groups)
    assert isinstance(next(iter(ds)), StateActionPair)


def test_concat_and_subset():
    a, b = make([2, 1]), make([1, 4], seed=1)
    c = concat([a, b])
    assert len(c) == 8 and c.group_counts().tolist() == [3, 5]
    assert c.subset([0, 1]).group_counts().tolist() == [2, 0]


# proportions

def test_empirical_proportions_examples():
    assert empirical_proportions(make([7, 3])).tolist() == [0.7, 0.3]
    np.testing.assert_allclose(empirical_proportions(make([5, 5, 5])), [1 / 3] * 3)
    with pytest.raises(DomainError, match="nonempty"):
        empirical_proportions(make([10, 0]))


def test_exact_proportions_sum_to_one():
    assert sum(exact_proportions(make([1, 1, 1]))) == 1


@given(st.lists(st.integers(1, 20), min_size=1, max_size=5), st.integers(0, 2 ** 32 - 1))
def test_proportions_permutation_invariant(counts, seed):
    ds = make(counts)
    perm = np.random.default_rng(seed).permutation(len(ds))
    assert np.array_equal(empirical_proportions(ds), empirical_proportions(ds.subset(perm)))


# normalize_states

def _states(values):
    v = np.asarray(values, dtype=float)[:, None]
    return LabeledDataset(v, np.zeros_like(v), np.zeros(len(v), dtype=int), 1)


def test_normalize_examples():
    out, _ = normalize_states(_states([1, -1, 1, -1]))
    assert out.states.ravel().tolist() == [1, -1, 1, -1]
    out, scale = normalize_states(_states([2, -2]))
    assert out.states.ravel().tolist() == [1, -1] and scale.tolist() == [2.0]
    # only an all-zero dimension is degenerate; a constant 5 scales to 1
    out, _ = normalize_states(_states([5, 5, 5]))
    assert np.allclose(out.states, 1.0)
    with pytest.raises(DomainError, match="dimension 0"):
        normalize_states(_states([0, 0]))


def test_normalize_per_group():
    ds = make([40, 60], dim=2)
    out, scales = normalize_states(ds, per_group=True)
    assert scales.shape == (2, 2)
    for i in range(2):
        np.testing.assert_allclose(np.mean(out.states[out.groups == i] ** 2, axis=0), 1.0)


# simplex steps

def test_project_step_examples():
    a = simplex_project_step([0.6, 0.4], [0.4, 0.2], 1.0)
    np.testing.assert_allclose(a.alpha, [0.7, 0.3], atol=1e-15)
    assert simplex_project_step([0.05, 0.95], [-1, 1], 0.2).alpha.tolist() == [0.0, 1.0]
    with pytest.raises(DomainError):
        simplex_project_step([0.5, 0.5], [1, 0], 0.0)


def test_delta_report_lambda():
    rep = DeltaReport(np.array([0.4, 0.2]), -0.3, np.zeros(2))
    np.testing.assert_allclose(rep.projected, [0.1, -0.1])


simplex = arrays(float, st.integers(2, 6), elements=st.floats(0.01, 1)).map(lambda x: x / x.sum())


@given(simplex, st.data(), st.floats(1e-3, 10))
@settings(max_examples=200)
def test_project_step_stays_on_simplex(alpha, data, step):
    g = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=alpha.size, max_size=alpha.size)))
    for fn in (simplex_project_step, simplex_eg_step):
        out = fn(alpha, g, step).alpha
        assert np.all(out >= 0) and abs(out.sum() - 1) <= 1e-12


@given(simplex, st.floats(-100, 100), st.floats(1e-3, 10))
def test_uniform_gradient_is_annihilated(alpha, c, step):
    out = simplex_project_step(alpha, np.full(alpha.size, c), step).alpha
    np.testing.assert_allclose(out, alpha, atol=1e-12)


@given(simplex, st.data(), st.floats(-3, 3))
def test_project_step_shift_invariant(alpha, data, c):
    g = np.array(data.draw(st.lists(st.floats(-5, 5), min_size=alpha.size, max_size=alpha.size)))
    a = simplex_project_step(alpha, g, 0.5).alpha
    b = simplex_project_step(alpha, g + c, 0.5).alpha
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_weight_vector_invariants():
    with pytest.raises(DomainError):
        WeightVector(np.array([0.5, 0.6]))
    with pytest.raises(DomainError):
        WeightVector(np.array([1.5, -0.5]))


# file format

def test_dataset_file_round_trip(tmp_path):
    ds = make([3, 2], dim=2)
    p = tmp_path / "d.jsonl"
    save_dataset(ds, p)
    lines = p.read_text().splitlines()
    assert lines[0] == '{"k":2,"state_dim":2,"action_dim":2}'
    assert set(__import__("json").loads(lines[1])) == {"state", "action", "group"}
    back = load_dataset(p)
    assert np.array_equal(back.states, ds.states) and np.array_equal(back.actions, ds.actions)
    assert np.array_equal(back.groups, ds.groups) and back.k == 2
