"""Weighted behaviour-cloning training with per-group loss tracking."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DomainError, LabeledDataset, WeightVector, empirical_proportions
from .policy import nll, nll_and_grad, nll_constant


class TrainingDivergence(RuntimeError):
    def __init__(self, epoch: int, msg: str = "loss became non-finite"):
        super().__init__(f"epoch {epoch}: {msg}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 200
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    convergence_tol: float = 0.0  # stop once |loss change| < tol; 0 disables
    max_halvings: int = 10
    resample: bool = False  # mini-batches drawn with replacement in proportion to sample weights

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError("lr must be positive")
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")


@dataclass
class LossTrace:
    """Per-epoch weighted total and per-group mean NLL; row 0 is the starting point."""

    weights: np.ndarray
    offset: float  # zero-residual NLL constant of the policy
    total: list = field(default_factory=list)
    per_group: list = field(default_factory=list)
    lr_final: float = 0.0
    halvings: int = 0
    stalled: bool = False

    def append(self, total: float, per_group: np.ndarray) -> None:
        self.total.append(float(total))
        self.per_group.append(np.asarray(per_group, dtype=float))

    def __len__(self) -> int:
        return len(self.total)

    @property
    def final_group_losses(self) -> np.ndarray:
        return self.per_group[-1]

    def to_csv(self, path) -> None:
        k = len(self.weights)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "L_total"] + [f"L_{i + 1}" for i in range(k)])
            for e, (t, g) in enumerate(zip(self.total, self.per_group)):
                w.writerow([e, repr(t)] + [repr(float(x)) for x in g])


def _group_means(per_sample: np.ndarray, groups: np.ndarray, k: int) -> np.ndarray:
    sums = np.bincount(groups, weights=per_sample, minlength=k)
    counts = np.bincount(groups, minlength=k)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts


def group_losses(policy, dataset: LabeledDataset) -> np.ndarray:
    counts = dataset.group_counts()
    if np.any(counts == 0):
        raise DomainError(f"empty groups: {np.flatnonzero(counts == 0).tolist()}")
    per = nll(policy, dataset.states, dataset.actions)
    return _group_means(per, dataset.groups, dataset.k)


def alpha_sample_weights(dataset: LabeledDataset, alpha) -> np.ndarray:
    """Per-pair weights alpha_g / n_g, so sum_n w_n * l_n = sum_g alpha_g * mean_g(l)."""
    a = np.asarray(alpha, dtype=float)
    if a.size != dataset.k:
        raise DomainError(f"{a.size} weights for {dataset.k} groups")
    counts = dataset.group_counts()
    if np.any(counts == 0):
        raise DomainError(f"empty groups: {np.flatnonzero(counts == 0).tolist()}")
    return a[dataset.groups] / counts[dataset.groups]


def train_weighted(dataset: LabeledDataset, alpha, cfg: TrainConfig, policy):
    """Minimise sum_i alpha_i * L_i(theta) starting from ``policy``.

    Returns ``(policy, trace)``.
    """
    a = WeightVector(np.asarray(alpha, dtype=float)).alpha
    w = alpha_sample_weights(dataset, a)
    return _fit(policy, dataset, w, cfg, a)


def train_sample_weighted(dataset: LabeledDataset, sample_weights, cfg: TrainConfig, policy):
    """Minimise mean_n w_n * l_n for per-pair weights ``sample_weights``."""
    sw = np.asarray(getattr(sample_weights, "weights", sample_weights), dtype=float)
    if sw.shape != (len(dataset),) or np.any(sw < 0):
        raise DomainError("need one nonnegative weight per pair")
    w = sw / len(dataset)
    eff = np.bincount(dataset.groups, weights=w, minlength=dataset.k)
    return _fit(policy, dataset, w, cfg, eff / eff.sum())


def _fit(policy, dataset, w, cfg: TrainConfig, trace_weights):
    S, A, G, k = dataset.states, dataset.actions, dataset.groups, dataset.k
    trace = LossTrace(np.asarray(trace_weights, dtype=float), nll_constant(policy))
    per, grad = nll_and_grad(policy, S, A, w)
    loss = float(w @ per)
    if not np.isfinite(loss):
        raise TrainingDivergence(0)
    trace.append(loss, _group_means(per, G, k))
    lr = cfg.lr
    if cfg.batch_size is None and not cfg.resample:
        for epoch in range(1, cfg.epochs + 1):
            while True:
                cand = policy.with_params(policy.params - lr * grad)
                per_c, grad_c = nll_and_grad(cand, S, A, w)
                loss_c = float(w @ per_c)
                if np.isfinite(loss_c) and loss_c <= loss + 1e-12 * max(1.0, abs(loss)):
                    break
                if trace.halvings >= cfg.max_halvings:
                    if not np.isfinite(loss_c):
                        raise TrainingDivergence(epoch)
                    trace.stalled = True
                    break
                lr *= 0.5
                trace.halvings += 1
            if trace.stalled:
                break
            prev, policy, per, grad, loss = loss, cand, per_c, grad_c, loss_c
            trace.append(loss, _group_means(per, G, k))
            if cfg.convergence_tol and abs(prev - loss) < cfg.convergence_tol:
                break
    else:
        rng = np.random.default_rng(cfg.seed)
        n = len(dataset)
        bs = cfg.batch_size or n
        for epoch in range(1, cfg.epochs + 1):
            if cfg.resample:
                order = rng.choice(n, size=n, replace=True, p=w / w.sum())
                bw = np.full(n, w.sum() / n)
            else:
                order = rng.permutation(n)
                bw = w[order]
            start = policy
            while True:
                p = start
                for b0 in range(0, n, bs):
                    idx = order[b0:b0 + bs]
                    scale = n / len(idx)
                    _, g = nll_and_grad(p, S[idx], A[idx], bw[b0:b0 + bs] * scale)
                    p = p.with_params(p.params - lr * g)
                per = nll(p, S, A)
                loss_c = float(w @ per)
                if np.isfinite(loss_c):
                    break
                if trace.halvings >= cfg.max_halvings:
                    raise TrainingDivergence(epoch)
                lr *= 0.5
                trace.halvings += 1
            prev, policy, loss = loss, p, loss_c
            trace.append(loss, _group_means(per, G, k))
            if cfg.convergence_tol and abs(prev - loss) < cfg.convergence_tol:
                break
    trace.lr_final = lr
    return policy, trace


@dataclass
class BoundReport:
    ok: bool
    checked: int
    violations: list  # (epoch, group, kl_equivalent, bound)


def bound_check(trace: LossTrace, weights=None, slack: float = 1e-6) -> BoundReport:
    """Check each group's KL-equivalent loss against total / weight_i at every epoch.

    The KL-equivalent loss is the group NLL minus the zero-residual constant,
    floored at 0; the total is the weighted NLL minus the same constant.
    """
    if not len(trace):
        raise DomainError("empty trace")
    w = np.asarray(trace.weights if weights is None else weights, dtype=float)
    violations, checked = [], 0
    for epoch, (tot, per) in enumerate(zip(trace.total, trace.per_group)):
        kl_total = tot - trace.offset
        kl_groups = np.maximum(per - trace.offset, 0.0)
        for i, (kl, wi) in enumerate(zip(kl_groups, w)):
            if wi <= 0:
                continue
            checked += 1
            bound = kl_total / wi
            if kl > bound + slack:
                violations.append((epoch, i, float(kl), float(bound)))
    return BoundReport(not violations, checked, violations)


def standard_bc(dataset: LabeledDataset, cfg: TrainConfig, policy):
    """Plain behaviour cloning, i.e. weights equal to the empirical proportions."""
    return train_weighted(dataset, empirical_proportions(dataset), cfg, policy)
