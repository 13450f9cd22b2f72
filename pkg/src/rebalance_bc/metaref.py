"""Learned reference losses via meta-gradients on the group weights.

For a target group i, the weights alpha are tuned so that a few gradient
steps on sum_j alpha_j L_j reduce L_i as much as possible. Since the
weighted objective is linear in alpha, one inner step gives

    theta' = theta - lr * sum_j alpha_j g_j(theta)
    dL_i(theta') / dalpha_j = -lr * <grad L_i(theta'), g_j(theta)>

which needs only first-order gradients. With several inner steps the chain
rule also picks up curvature terms -lr * H_alpha(theta_t) v. Mode "exact"
keeps them, using Hessian-vector products from central differences of the
analytic gradient (exact up to rounding for the linear policy, whose
gradient is linear in the parameters). Mode "first_order" drops them and
keeps only the direct -lr * G(theta_t)^T v terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, LabeledDataset, WeightVector, simplex_project_step
from .policy import grad_weighted_nll
from .rebalance import ReferenceLosses
from .trainer import (TrainConfig, TrainingDivergence, alpha_sample_weights, group_losses,
                      train_weighted)


class ReferenceSearchError(RuntimeError):
    def __init__(self, group: int, cause: Exception):
        super().__init__(f"group {group}: {cause}")
        self.group = group


class MetaDivergence(RuntimeError):
    def __init__(self, round_idx: int, msg: str):
        super().__init__(f"meta round {round_idx}: {msg}")
        self.round = round_idx


@dataclass
class MetaConfig:
    inner_lr: float = 0.05
    meta_lr: float = 1.0
    inner_steps: int = 1
    meta_rounds: int = 200
    seed: int = 0
    alpha_init: np.ndarray | None = None  # None: smoothed one-hot on the target
    mode: str = "exact"  # or "first_order"; only matters when inner_steps > 1
    alpha_tol: float = 1e-5
    final: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=500))
    max_halvings: int = 10

    def __post_init__(self):
        if not (self.inner_lr > 0 and self.meta_lr > 0):
            raise DomainError("inner_lr and meta_lr must be positive")
        if self.inner_steps < 1:
            raise DomainError("inner_steps must be >= 1")
        if self.mode not in ("exact", "first_order"):
            raise DomainError(f"unknown mode {self.mode!r}")


def group_grads(policy, dataset: LabeledDataset) -> np.ndarray:
    """Gradients of each group's mean NLL, shape (k, n_params)."""
    out = np.empty((dataset.k, policy.n_params))
    for j in range(dataset.k):
        onehot = np.zeros(dataset.k)
        onehot[j] = 1.0
        w = alpha_sample_weights(dataset, onehot)
        out[j] = grad_weighted_nll(policy, dataset.states, dataset.actions, w)
    return out


def inner_step(policy, dataset: LabeledDataset, alpha, lr: float):
    """theta - lr * sum_j alpha_j g_j(theta)."""
    w = alpha_sample_weights(dataset, WeightVector(np.asarray(alpha, dtype=float)).alpha)
    g = grad_weighted_nll(policy, dataset.states, dataset.actions, w)
    new = policy.params - lr * g
    if not np.all(np.isfinite(new)):
        raise DomainError("inner step produced non-finite parameters")
    return policy.with_params(new)


def _unrolled(policy, dataset, alpha, lr, steps):
    policies = [policy]
    for _ in range(steps):
        policies.append(_step_free(policies[-1], dataset, alpha, lr))
    return policies


def _step_free(policy, dataset, alpha, lr):
    # like inner_step but alpha may leave the simplex (finite-difference probes)
    w = alpha_sample_weights(dataset, alpha)
    g = grad_weighted_nll(policy, dataset.states, dataset.actions, w)
    new = policy.params - lr * g
    if not np.all(np.isfinite(new)):
        raise DomainError("inner step produced non-finite parameters")
    return policy.with_params(new)


def _hvp(policy, dataset, alpha, v, eps=1e-5):
    scale = np.linalg.norm(v)
    if scale == 0:
        return np.zeros_like(v)
    h = eps / scale
    w = alpha_sample_weights(dataset, alpha)
    p = policy.params
    gp = grad_weighted_nll(policy.with_params(p + h * v), dataset.states, dataset.actions, w)
    gm = grad_weighted_nll(policy.with_params(p - h * v), dataset.states, dataset.actions, w)
    return (gp - gm) / (2 * h)


def meta_grad_alpha(policy, dataset: LabeledDataset, alpha, target: int, lr: float,
                    inner_steps: int = 1, mode: str = "exact") -> np.ndarray:
    """Gradient of L_target after ``inner_steps`` steps, with respect to alpha."""
    a = np.asarray(alpha, dtype=float)
    if a.size != dataset.k:
        raise DomainError(f"{a.size} weights for {dataset.k} groups")
    if not 0 <= target < dataset.k:
        raise DomainError(f"target group {target} out of range")
    if lr == 0:
        return np.zeros(dataset.k)
    traj = _unrolled(policy, dataset, a, lr, inner_steps)
    onehot = np.zeros(dataset.k)
    onehot[target] = 1.0
    v = grad_weighted_nll(traj[-1], dataset.states, dataset.actions,
                          alpha_sample_weights(dataset, onehot))
    out = np.zeros(dataset.k)
    for t in range(inner_steps - 1, -1, -1):
        out += -lr * group_grads(traj[t], dataset) @ v
        if t and mode == "exact":
            v = v - lr * _hvp(traj[t], dataset, a, v)
    return out


def target_loss_after(policy, dataset, alpha, target, lr, inner_steps=1) -> float:
    """L_target after unrolling ``inner_steps`` steps with weights alpha."""
    p = _unrolled(policy, dataset, np.asarray(alpha, dtype=float), lr, inner_steps)[-1]
    return float(group_losses(p, dataset)[target])


def smoothed_onehot(k: int, target: int, smoothing: float = 0.1) -> np.ndarray:
    a = np.full(k, smoothing / k)
    a[target] = 1.0 - smoothing * (k - 1) / k
    return a


@dataclass
class AlphaStarResult:
    alpha_star: WeightVector
    l_min: float
    history: list  # alpha per meta round
    policy: object  # retrained at alpha_star
    rounds: int
    meta_lr_final: float


def learn_alpha_star(dataset: LabeledDataset, target: int, cfg: MetaConfig, policy) -> AlphaStarResult:
    """Meta-learn the mixture that best serves ``target``, then measure its floor.

    Each round takes the inner step(s) on theta and a descent step on alpha
    along the meta-gradient. A step that would raise the target's post-step
    loss is retried with half the meta learning rate. The floor L_min is the
    target's loss after retraining ``policy`` from scratch at the final alpha.
    """
    k = dataset.k
    alpha = WeightVector(smoothed_onehot(k, target) if cfg.alpha_init is None
                         else np.asarray(cfg.alpha_init, dtype=float))
    theta = policy
    meta_lr = cfg.meta_lr
    halvings = 0
    history = [alpha.alpha]
    rounds = 0
    for r in range(cfg.meta_rounds):
        rounds = r + 1
        if k == 1:
            break
        mg = meta_grad_alpha(theta, dataset, alpha.alpha, target, cfg.inner_lr,
                             cfg.inner_steps, cfg.mode)
        if not np.all(np.isfinite(mg)):
            raise MetaDivergence(r, "non-finite meta-gradient")
        base = target_loss_after(theta, dataset, alpha.alpha, target, cfg.inner_lr, cfg.inner_steps)
        while True:
            cand = simplex_project_step(alpha.alpha, -mg, meta_lr)
            new = target_loss_after(theta, dataset, cand.alpha, target, cfg.inner_lr, cfg.inner_steps)
            if new <= base + 1e-12 * max(1.0, abs(base)) or halvings >= cfg.max_halvings:
                break
            meta_lr *= 0.5
            halvings += 1
        for _ in range(cfg.inner_steps):
            theta = inner_step(theta, dataset, alpha.alpha, cfg.inner_lr)
        if not np.all(np.isfinite(theta.params)):
            raise MetaDivergence(r, "policy parameters diverged")
        change = np.max(np.abs(cand.alpha - alpha.alpha))
        alpha = cand
        history.append(alpha.alpha)
        if change < cfg.alpha_tol:
            break
    trained, trace = train_weighted(dataset, alpha, cfg.final, policy)
    return AlphaStarResult(alpha, float(trace.final_group_losses[target]), history, trained,
                           rounds, meta_lr)


def compute_reference_losses(dataset: LabeledDataset, cfg: MetaConfig, policy,
                             executor=None) -> ReferenceLosses:
    """Meta-learned floors for every group, tagged MetaLearned.

    ``executor`` (any ``concurrent.futures`` executor) runs the per-group
    searches in parallel; results are gathered in group order.
    """
    futs = None
    if executor is not None:
        futs = [executor.submit(learn_alpha_star, dataset, i, cfg, policy) for i in range(dataset.k)]
    results = []
    for i in range(dataset.k):
        try:
            results.append(learn_alpha_star(dataset, i, cfg, policy) if futs is None
                           else futs[i].result())
        except (DomainError, MetaDivergence, TrainingDivergence) as exc:
            raise ReferenceSearchError(i, exc) from exc
    return ReferenceLosses("MetaLearned", [r.l_min for r in results],
                           np.array([r.alpha_star.alpha for r in results]))
