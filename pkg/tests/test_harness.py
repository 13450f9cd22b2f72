import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rebalance_bc.core import DomainError
from rebalance_bc.harness import (STRATEGIES, ExperimentPlan, ToySetup, aggregate, make_recipe,
                                  preset, run_plan, sample_std, welch_t)
from rebalance_bc.trainer import TrainConfig

TINY = ToySetup(n_pairs=60, hidden=(4,), train=TrainConfig(lr=0.3, epochs=20), minmax_rounds=4,
                minmax_min_rounds=1, meta_rounds=3, upsample_rounds=2, n_optimal=40, n_suboptimal=20)


def tiny_plan(strategies=("standard", "equal"), n_seeds=2, **kw):
    return ExperimentPlan("equal-weight", "imbalanced", list(strategies), n_seeds=n_seeds,
                          rollouts=10, setup=TINY, **kw)


def test_table_shape():
    table = run_plan(tiny_plan())
    assert not table.failures
    success = {(r.condition, r.group) for r in table.rows if r.metric == "success"}
    assert success == {(f"imbalanced/{s}", g) for s in ("standard", "equal")
                       for g in ("left", "middle", "right")}
    for r in table.rows:
        assert r.n == 2 and r.std >= 0
        if r.metric == "success":
            assert 0 <= r.mean <= 1


def test_every_strategy_runs():
    table = run_plan(tiny_plan(STRATEGIES, n_seeds=1))
    assert not table.failures, table.failures
    assert len(table.per_seed[0]["results"]) == len(STRATEGIES)


def test_remix_recipe():
    ds = make_recipe("remix", TINY, 0)
    assert ds.k == 2 and ds.group_counts().tolist() == [40, 20]
    with pytest.raises(DomainError):
        make_recipe("nope", TINY, 0)


def test_bit_reproducible(tmp_path):
    a, b = run_plan(tiny_plan()), run_plan(tiny_plan())
    a.to_json(tmp_path / "a.json")
    b.to_json(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_parallel_matches_serial():
    plan = tiny_plan(("standard",))
    assert run_plan(plan, workers=2).per_seed == run_plan(plan, workers=1).per_seed


def test_std_is_sample_std():
    table = run_plan(tiny_plan(("standard",), n_seeds=3))
    for r in table.rows:
        if r.metric == "loss":
            vals = table.values(r.condition, "loss", int(r.group[-1]))
            assert abs(r.std - np.std(vals, ddof=1)) <= 1e-12
            assert abs(r.mean - np.mean(vals)) <= 1e-12


def test_failures_recorded_and_excluded(monkeypatch):
    import rebalance_bc.harness as h
    real = h.apply_strategy

    def flaky(name, data, setup, seed):
        if name == "equal" and seed == 1:
            raise RuntimeError("boom")
        return real(name, data, setup, seed)

    monkeypatch.setattr(h, "apply_strategy", flaky)
    table = run_plan(tiny_plan())
    assert len(table.failures) == 1 and "boom" in table.failures[0]["error"]
    assert all(r.n == (1 if "equal" in r.condition else 2) for r in table.rows)


def test_exports(tmp_path):
    table = run_plan(tiny_plan(("standard",)))
    table.to_csv(tmp_path / "t.csv")
    table.to_plot_data(tmp_path / "p.csv")
    table.to_json(tmp_path / "t.json")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "scenario,condition,group,metric,mean,std,n"
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "x,group,y,err"
    assert len(json.loads((tmp_path / "t.json").read_text())["rows"]) == len(table.rows)


def test_presets_and_validation():
    for name in ("imbalance-effect", "equal-weight", "remix-failure", "meta-vs-baselines", "optimal-only"):
        assert preset(name).scenario == name
    with pytest.raises(DomainError):
        preset("nope")
    with pytest.raises(DomainError):
        tiny_plan(("magic",))


# welch_t

def test_welch_identical():
    assert welch_t([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    assert welch_t([2, 2], [2, 2]) == (0.0, 1.0)


def test_welch_separated():
    jitter = np.array([1e-9, -1e-9, 2e-9, 0.0])
    _, p = welch_t(np.zeros(4) + jitter, np.ones(4) - jitter)
    assert p < 1e-6


def test_welch_textbook():
    # worked example from the Wikipedia "Welch's t-test" article (sample set A2/B2)
    a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4]
    b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4]
    t, p = welch_t(a, b)
    assert round(t, 2) == -2.46 and round(p, 3) == 0.021
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert t == pytest.approx(ref.statistic, abs=1e-3) and p == pytest.approx(ref.pvalue, abs=1e-3)


samples = st.lists(st.floats(-100, 100), min_size=2, max_size=12)


@given(samples, samples)
def test_welch_symmetry(a, b):
    t1, p1 = welch_t(a, b)
    t2, p2 = welch_t(b, a)
    assert t1 == -t2 or (math.isinf(t1) and t1 == -t2)
    assert p1 == pytest.approx(p2, abs=1e-12)
    assert 0 <= p1 <= 1


def test_welch_needs_two():
    with pytest.raises(DomainError):
        welch_t([1.0], [1.0, 2.0])


def test_sample_std():
    assert sample_std([1.0, 3.0]) == pytest.approx(math.sqrt(2))
    assert sample_std([4.0]) == 0.0
