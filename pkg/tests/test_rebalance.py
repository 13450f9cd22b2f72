from dataclasses import replace

import numpy as np
import pytest

from rebalance_bc.core import DomainError, LabeledDataset, concat, empirical_proportions
from rebalance_bc.policy import LinearGaussianPolicy, MlpPolicy, nll
from rebalance_bc.rebalance import (MinMaxConfig, ReferenceLosses, SampleWeights, delta,
                                    delta_from_losses, equal_weights, error_upsample,
                                    importance_weights, load_weights, minmax_reweight,
                                    reference_policy_targets, save_weights, table_row,
                                    upsample_sample_weights)
from rebalance_bc.suites import grid_oracle, linear_groups, minmax_case
from rebalance_bc.trainer import TrainConfig, group_losses, train_sample_weighted, train_weighted

LIN = TrainConfig(lr=0.5, epochs=100)


def lin(d=1):
    return LinearGaussianPolicy.zeros(d, d)


def test_equal_weights():
    np.testing.assert_allclose(equal_weights(3).alpha, [1 / 3] * 3)
    assert equal_weights(1).alpha.tolist() == [1.0]
    with pytest.raises(DomainError):
        equal_weights(0)


def test_equal_weights_cancel_gains():
    ds = linear_groups((1.0, -1.0), (0.7, 0.3), 2000)
    p, _ = train_weighted(ds, equal_weights(2), LIN, lin())
    assert abs(p.theta[0, 0]) < 0.02


def _counts(*c):
    g = np.repeat(np.arange(len(c)), c)
    x = np.arange(len(g), dtype=float)[:, None] + 1
    return LabeledDataset(x, x.copy(), g, len(c))


def test_importance_weights():
    assert np.all(importance_weights(_counts(5, 5)).weights == 1)
    w = importance_weights(_counts(8, 2)).weights
    np.testing.assert_allclose(w[:8], 0.625)
    np.testing.assert_allclose(w[8:], 2.5)
    ds = _counts(8, 2)
    mass = np.bincount(ds.groups, weights=w)
    np.testing.assert_allclose(mass / mass.sum(), [0.5, 0.5])


def test_importance_weighting_equals_equal_weights():
    ds = linear_groups((1.0, -1.0), (0.8, 0.2), 500, seed=2)
    cfg = TrainConfig(lr=0.5, epochs=20)
    a, ta = train_sample_weighted(ds, importance_weights(ds), cfg, lin())
    b, tb = train_weighted(ds, equal_weights(2), cfg, lin())
    np.testing.assert_allclose(ta.total, tb.total, atol=1e-10)


def test_delta_examples():
    ds = linear_groups((1.0, -1.0), (0.5, 0.5), 100)
    pol = LinearGaussianPolicy([[0.3]])
    cur = group_losses(pol, ds)
    rep = delta(pol, ds, ReferenceLosses("Explicit", cur))
    assert np.all(rep.delta == 0) and rep.lam == 0
    assert delta_from_losses([0.4, 0.2], [0.0, 0.0]).lam == pytest.approx(-0.3)
    np.testing.assert_array_equal(delta(pol, ds, ReferenceLosses.zero(2)).delta, cur)
    with pytest.raises(DomainError):
        delta_from_losses([0.1, 0.2], [0.0])


def test_minmax_symmetric_case_matches_grid_oracle():
    ds, cfg = minmax_case()
    res = minmax_reweight(ds, ReferenceLosses.zero(2), cfg, lin())
    assert res.converged and res.status == "converged"
    assert res.history[-1].spread < cfg.delta_tol
    np.testing.assert_allclose(res.alpha.alpha, [0.5, 0.5], atol=0.02)
    np.testing.assert_allclose(res.alpha.alpha, grid_oracle(ds, [0, 0]), atol=0.02)
    assert abs(res.policy.theta[0, 0]) < 0.05


def test_minmax_exponentiated_also_converges():
    ds, cfg = minmax_case()
    res = minmax_reweight(ds, ReferenceLosses.zero(2), replace(cfg, ascent="exponentiated", alpha_lr=1.0),
                          lin())
    assert res.converged
    assert np.ptp(res.history[-1].delta) < cfg.delta_tol


def test_minmax_single_group_is_plain_training():
    ds = linear_groups((0.7,), (1.0,), 300)
    res = minmax_reweight(ds, ReferenceLosses.zero(1), MinMaxConfig(outer_rounds=3, inner=LIN), lin())
    assert res.alpha.alpha.tolist() == [1.0]
    assert res.policy.theta[0, 0] == pytest.approx(0.7, abs=0.02)


def test_minmax_with_exact_floors():
    # well separated 2-D problem: each group lives on its own state axis, so a
    # linear policy fits both exactly and the per-group floors are the noise terms
    rng = np.random.default_rng(0)
    n = 400
    s = np.zeros((2 * n, 2))
    s[:n, 0] = rng.normal(size=n)
    s[n:, 1] = rng.normal(size=n)
    a = np.zeros((2 * n, 2))
    a[:n, 0] = 2 * s[:n, 0]
    a[n:, 1] = -s[n:, 1]
    ds = LabeledDataset(s, a, np.repeat([0, 1], n), 2)
    floor = ReferenceLosses("Explicit", group_losses(LinearGaussianPolicy([[2, 0], [0, -1]]), ds))
    res = minmax_reweight(ds, floor, MinMaxConfig(alpha_lr=0.5, outer_rounds=400, delta_tol=1e-4,
                                                  inner=replace(LIN, epochs=5)), lin(2))
    assert res.converged and res.history[-1].spread < 1e-4


def test_shift_invariance_bit_exact():
    ds, cfg = minmax_case(seed=4)
    cfg = replace(cfg, outer_rounds=40)
    # references whose shift by 1.0 is itself exact in binary floating point
    for refs in (ReferenceLosses.zero(2), ReferenceLosses("Explicit", [0.25, 1.125])):
        a = minmax_reweight(ds, refs, cfg, lin())
        b = minmax_reweight(ds, refs.shifted(1.0), cfg, lin())
        assert [h.alpha.tobytes() for h in a.history] == [h.alpha.tobytes() for h in b.history]
        assert a.policy.params.tobytes() == b.policy.params.tobytes()


def test_shift_invariance_inexact_references():
    # 0.3 + 1.0 rounds, so only agreement to rounding can be asked for
    ds, cfg = minmax_case(seed=4)
    refs = ReferenceLosses("Explicit", [0.3, 1.1])
    a = minmax_reweight(ds, refs, replace(cfg, outer_rounds=40), lin())
    b = minmax_reweight(ds, refs.shifted(1.0), replace(cfg, outer_rounds=40), lin())
    for x, y in zip(a.history, b.history):
        np.testing.assert_allclose(x.alpha, y.alpha, atol=1e-12)


def test_unconverged_is_flagged():
    ds, cfg = minmax_case()
    res = minmax_reweight(ds, ReferenceLosses.zero(2), replace(cfg, outer_rounds=2), lin())
    assert not res.converged and res.status == "unconverged"


def test_reference_policy_targets():
    bal = linear_groups((1.0, 1.0), (0.5, 0.5), 400, sigma=0.0)
    refs = reference_policy_targets(bal, LIN, lin())
    assert refs.source == "ReferencePolicy"
    np.testing.assert_allclose(refs.values, 0.5 * np.log(2 * np.pi), atol=1e-6)
    imb = linear_groups((1.0, -1.0), (0.8, 0.2), 1000)
    refs = reference_policy_targets(imb, LIN, lin())
    assert refs.values[1] > refs.values[0]


def test_error_upsample_prefers_minority():
    ds = linear_groups((1.0, -1.0), (0.8, 0.2), 500, seed=1)
    out = error_upsample(ds, cfg=TrainConfig(lr=0.5, epochs=30), policy=lin(), seed=0)
    assert len(out.buffer) >= len(ds) // 2 and len(out.dataset) == len(ds) + len(out.buffer)
    frac = np.mean(out.buffer.groups == 1)
    assert frac > 1.5 * 0.2


def test_error_upsample_degenerate_cases():
    ds = linear_groups((0.5,), (1.0,), 50, sigma=0.0)
    out = error_upsample(ds, threshold=10, cfg=TrainConfig(lr=0.5, epochs=300), policy=lin())
    assert out.fallback_rounds == out.rounds >= 1
    same = error_upsample(ds, threshold=0, policy=lin())
    assert same.dataset is ds and same.buffer is None
    with pytest.raises(DomainError):
        error_upsample(ds.subset(range(5)), policy=lin())


def test_upsample_sample_weights():
    w = upsample_sample_weights([1.0, 3.0])
    assert w.weights.tolist() == [0.5, 1.5] and not w.fallback
    assert upsample_sample_weights([0.0, 0.0]).fallback
    with pytest.raises(DomainError):
        SampleWeights(np.array([1.0, 2.0]))


def test_file_formats(tmp_path):
    refs = ReferenceLosses("MetaLearned", [1.5, 1.9], np.array([[0.9, 0.1], [0.2, 0.8]]))
    refs.save(tmp_path / "r.jsonl")
    back = ReferenceLosses.load(tmp_path / "r.jsonl")
    assert back.source == "MetaLearned" and back.values.tolist() == [1.5, 1.9]
    assert back.alpha_star.tolist() == [[0.9, 0.1], [0.2, 0.8]]
    hist = [delta_from_losses([1.0, 2.0], [0.0, 0.0], [0.5, 0.5])]
    save_weights(tmp_path / "w.jsonl", "minmax-zero", [0.4, 0.6], "Zero", [1.0, 1.0], hist, True)
    w = load_weights(tmp_path / "w.jsonl")
    assert w["strategy"] == "minmax-zero" and w["converged"] is True and w["k"] == 2
    assert w["alpha"].tolist() == [0.4, 0.6] and w["sample_weights"].tolist() == [1.0, 1.0]
    assert w["history"][0]["delta"] == [1.0, 2.0]


def test_table_row():
    row = table_row("Remix", [0.5348, 0.4652], [0.52, 0.9337])
    assert row == {"method": "Remix", "alpha_1": 0.5348, "alpha_2": 0.4652,
                   "lref_1": 0.52, "lref_2": 0.9337}


def test_reference_validation():
    with pytest.raises(DomainError):
        ReferenceLosses("Guess", [0.0])
    with pytest.raises(DomainError):
        ReferenceLosses("Explicit", [np.inf])
    with pytest.raises(DomainError):
        MinMaxConfig(alpha_lr=0)
