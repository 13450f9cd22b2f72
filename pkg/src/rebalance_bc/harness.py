"""Seeded multi-run experiments on the point-mass task.

A plan is a list of conditions ``(recipe, strategy)``. For every seed each
recipe's dataset is generated once and shared by all strategies, and every
policy is evaluated from the same start states, so per-seed results are
paired across conditions.
"""
from __future__ import annotations

import csv
import json
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import betainc

from .core import DomainError, LabeledDataset, concat, empirical_proportions
from .datagen import (ToyEnv, batch_success, default_env, make_suboptimal, relabel,
                      sample_starts, toy_dataset)
from .metaref import MetaConfig, compute_reference_losses
from .policy import MlpPolicy
from .rebalance import (MinMaxConfig, ReferenceLosses, equal_weights, error_upsample,
                        minmax_reweight, reference_policy_targets)
from .trainer import TrainConfig, group_losses, train_weighted

SCENARIOS = ("imbalance-effect", "equal-weight", "remix-failure", "meta-vs-baselines", "optimal-only")
STRATEGIES = ("standard", "equal", "minmax-zero", "minmax-refpolicy", "minmax-meta", "upsample")
IMBALANCED = (3 / 7, 1 / 7, 3 / 7)
BALANCED = (1 / 3, 1 / 3, 1 / 3)


def _default_train():
    return TrainConfig(lr=0.3, epochs=2000)


@dataclass
class ToySetup:
    """Desk-scale knobs shared by every condition of a plan."""

    env: ToyEnv = field(default_factory=default_env)
    n_pairs: int = 700
    hidden: tuple = (32, 32)
    sigma: float = 1.0
    train: TrainConfig = field(default_factory=_default_train)
    alpha_lr: float = 2.0
    minmax_rounds: int = 600
    minmax_min_rounds: int = 400
    inner_epochs: int = 5
    delta_tol: float = 1e-3
    meta_lr: float = 100.0
    meta_rounds: int = 300
    upsample_rounds: int = 10
    upsample_split: float = 0.8
    n_optimal: int = 600
    n_suboptimal: int = 300
    subopt_bias: tuple = (0.1, -0.1)
    subopt_noise: float = 0.5

    def policy(self, seed: int) -> MlpPolicy:
        d = self.env.regions[0].box.dim
        return MlpPolicy.create(d, d, self.hidden, self.sigma, seed)

    def minmax(self) -> MinMaxConfig:
        return MinMaxConfig(alpha_lr=self.alpha_lr, outer_rounds=self.minmax_rounds,
                            min_rounds=self.minmax_min_rounds, delta_tol=self.delta_tol,
                            inner=replace(self.train, epochs=self.inner_epochs))

    def meta(self, seed: int) -> MetaConfig:
        return MetaConfig(inner_lr=self.train.lr, meta_lr=self.meta_lr,
                          meta_rounds=self.meta_rounds, seed=seed, final=self.train)


def make_recipe(name: str, setup: ToySetup, seed: int) -> LabeledDataset:
    env = setup.env
    if name == "balanced":
        return toy_dataset(env, BALANCED, setup.n_pairs, seed)
    if name == "imbalanced":
        return toy_dataset(env, IMBALANCED, setup.n_pairs, seed)
    if name == "remix":
        # one behaviour family: group 0 optimal, group 1 corrupted, 2:1
        k = len(env.regions)
        opt = relabel(toy_dataset(env, BALANCED, setup.n_optimal, seed), [0] * k, 2)
        raw = relabel(toy_dataset(env, BALANCED, setup.n_suboptimal, seed + 100_003), [0] * k, 1)
        sub = make_suboptimal(raw, setup.subopt_noise, setup.subopt_bias, seed=seed + 200_003,
                              label_offset=1, group_count=2)
        return concat([opt, sub], 2)
    raise DomainError(f"unknown recipe {name!r}")


@dataclass
class StrategyOutcome:
    policy: object
    alpha: np.ndarray | None = None
    refs: np.ndarray | None = None
    converged: bool | None = None
    extra: dict = field(default_factory=dict)


def apply_strategy(name: str, data: LabeledDataset, setup: ToySetup, seed: int) -> StrategyOutcome:
    p0 = setup.policy(seed)
    tc = setup.train
    if name == "standard":
        rho = empirical_proportions(data)
        return StrategyOutcome(train_weighted(data, rho, tc, p0)[0], rho)
    if name == "equal":
        a = equal_weights(data.k)
        return StrategyOutcome(train_weighted(data, a, tc, p0)[0], a.alpha)
    if name.startswith("minmax-"):
        kind = name.split("-", 1)[1]
        if kind == "zero":
            refs = ReferenceLosses.zero(data.k)
        elif kind == "refpolicy":
            refs = reference_policy_targets(data, tc, p0)
        elif kind == "meta":
            refs = compute_reference_losses(data, setup.meta(seed), p0)
        else:
            raise DomainError(f"unknown strategy {name!r}")
        res = minmax_reweight(data, refs, setup.minmax(), p0)
        extra = {} if refs.alpha_star is None else {"alpha_star": refs.alpha_star.tolist()}
        return StrategyOutcome(res.policy, res.alpha.alpha, refs.values, res.converged, extra)
    if name == "upsample":
        up = error_upsample(data, len(data) // 2, setup.upsample_rounds, setup.upsample_split,
                            tc, p0, seed)
        policy = train_weighted(up.dataset, empirical_proportions(up.dataset), tc, p0)[0]
        counts = up.buffer.group_counts() if up.buffer is not None else np.zeros(data.k)
        return StrategyOutcome(policy, None, extra={"buffer_counts": counts.tolist()})
    raise DomainError(f"unknown strategy {name!r}")


@dataclass
class ExperimentPlan:
    scenario: str
    recipe: str
    strategies: list
    n_seeds: int = 10
    rollouts: int = 100  # per region
    base_seed: int = 0
    extra_conditions: list = field(default_factory=list)  # additional (recipe, strategy)
    setup: ToySetup = field(default_factory=ToySetup)

    def __post_init__(self):
        if self.n_seeds < 1 or self.rollouts < 1:
            raise DomainError("n_seeds and rollouts must be >= 1")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise DomainError(f"unknown strategy {s!r}; valid: {', '.join(STRATEGIES)}")

    @property
    def conditions(self) -> list[tuple[str, str]]:
        return [(self.recipe, s) for s in self.strategies] + [tuple(c) for c in self.extra_conditions]


def preset(scenario: str, **kw) -> ExperimentPlan:
    if scenario == "imbalance-effect":
        return ExperimentPlan(scenario, "imbalanced", ["standard"],
                              extra_conditions=[("balanced", "standard")], **kw)
    if scenario == "equal-weight":
        return ExperimentPlan(scenario, "imbalanced",
                              ["standard", "equal", "minmax-refpolicy", "upsample"],
                              extra_conditions=[("balanced", "standard")], **kw)
    if scenario in ("remix-failure", "meta-vs-baselines"):
        return ExperimentPlan(scenario, "remix",
                              ["standard", "minmax-zero", "minmax-refpolicy", "minmax-meta"], **kw)
    if scenario == "optimal-only":
        return ExperimentPlan(scenario, "imbalanced",
                              ["standard", "minmax-zero", "minmax-refpolicy", "minmax-meta"], **kw)
    raise DomainError(f"unknown scenario {scenario!r}; valid: {', '.join(SCENARIOS)}")


def _run_seed(plan: ExperimentPlan, index: int) -> dict:
    seed = plan.base_seed + index
    setup = plan.setup
    env = setup.env
    datasets, out = {}, {"seed": seed, "results": {}, "failures": []}
    n_regions = len(env.regions)
    starts = [sample_starts(env, plan.rollouts, [r], seed * 1000 + 17 + r)[0] for r in range(n_regions)]
    for recipe, strategy in plan.conditions:
        label = f"{recipe}/{strategy}"
        try:
            if recipe not in datasets:
                datasets[recipe] = make_recipe(recipe, setup, seed)
            data = datasets[recipe]
            oc = apply_strategy(strategy, data, setup, seed)
            success = [float(batch_success(env, oc.policy, starts[r], np.full(plan.rollouts, r)).mean())
                       for r in range(n_regions)]
            out["results"][label] = {
                "success": success,
                "loss": group_losses(oc.policy, data).tolist(),
                "alpha": None if oc.alpha is None else np.asarray(oc.alpha).tolist(),
                "refs": None if oc.refs is None else np.asarray(oc.refs).tolist(),
                "converged": oc.converged,
                **oc.extra,
            }
        except Exception as exc:
            out["failures"].append({"seed": seed, "condition": label, "error": repr(exc),
                                    "traceback": traceback.format_exc()})
    return out


@dataclass
class ResultRow:
    scenario: str
    condition: str
    group: str
    metric: str
    mean: float
    std: float
    n: int


@dataclass
class ResultTable:
    rows: list
    per_seed: list  # raw output of every seed, ordered by seed
    failures: list

    def values(self, condition: str, metric: str, group: int) -> np.ndarray:
        """Per-seed values of one (condition, metric, group), skipping failed runs."""
        return np.array([s["results"][condition][metric][group] for s in self.per_seed
                         if condition in s["results"]])

    def field(self, condition: str, key: str) -> list:
        return [s["results"][condition][key] for s in self.per_seed if condition in s["results"]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "condition", "group", "metric", "mean", "std", "n"])
            for r in self.rows:
                w.writerow([r.scenario, r.condition, r.group, r.metric, repr(r.mean), repr(r.std), r.n])

    def to_json(self, path) -> None:
        blob = {"rows": [r.__dict__ for r in self.rows], "failures": self.failures,
                "per_seed": self.per_seed}
        with open(path, "w") as fh:
            json.dump(blob, fh, indent=1)

    def to_plot_data(self, path, metric: str = "success") -> None:
        """Columns x (condition), group, y (mean), err (std) for external plotting."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "group", "y", "err"])
            for r in self.rows:
                if r.metric == metric:
                    w.writerow([r.condition, r.group, repr(r.mean), repr(r.std)])


def sample_std(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1)) if x.size > 1 else 0.0


def aggregate(plan: ExperimentPlan, per_seed: list) -> ResultTable:
    rows, failures = [], []
    for s in per_seed:
        failures.extend(s["failures"])
    region_names = [r.name for r in plan.setup.env.regions]
    for recipe, strategy in plan.conditions:
        label = f"{recipe}/{strategy}"
        done = [s["results"][label] for s in per_seed if label in s["results"]]
        if not done:
            continue
        for gi, name in enumerate(region_names):
            vals = [d["success"][gi] for d in done]
            rows.append(ResultRow(plan.scenario, label, name, "success",
                                  float(np.mean(vals)), sample_std(vals), len(vals)))
        for gi in range(len(done[0]["loss"])):
            vals = [d["loss"][gi] for d in done]
            rows.append(ResultRow(plan.scenario, label, f"group{gi}", "loss",
                                  float(np.mean(vals)), sample_std(vals), len(vals)))
    return ResultTable(rows, per_seed, failures)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("REBALANCE_BC_THREADS", "1")))
    except ValueError:
        return 1


def run_plan(plan: ExperimentPlan, workers: int | None = None) -> ResultTable:
    workers = worker_count() if workers is None else workers
    if workers > 1 and plan.n_seeds > 1:
        with ProcessPoolExecutor(max_workers=min(workers, plan.n_seeds)) as ex:
            per_seed = list(ex.map(_run_seed, [plan] * plan.n_seeds, range(plan.n_seeds)))
    else:
        per_seed = [_run_seed(plan, i) for i in range(plan.n_seeds)]
    return aggregate(plan, per_seed)


def welch_t(a, b) -> tuple[float, float]:
    """Welch's unequal-variance t statistic and two-sided p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise DomainError("each sample needs at least 2 values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        if ma == mb:
            return 0.0, 1.0
        return math.copysign(math.inf, ma - mb), 0.0
    t = (ma - mb) / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), min(max(p, 0.0), 1.0)
