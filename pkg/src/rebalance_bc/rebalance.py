"""Dataset balancing strategies: equal weights, min-max reweighting, error upsampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (DeltaReport, DomainError, LabeledDataset, WeightVector, concat,
                   empirical_proportions, simplex_eg_step, simplex_project_step)
from .trainer import TrainConfig, group_losses, train_weighted

REF_SOURCES = ("Zero", "ReferencePolicy", "MetaLearned", "Explicit")


@dataclass(frozen=True, eq=False)
class ReferenceLosses:
    source: str
    values: np.ndarray
    alpha_star: np.ndarray | None = None  # (k, k) rows of learned mixtures, MetaLearned only

    def __post_init__(self):
        if self.source not in REF_SOURCES:
            raise DomainError(f"unknown reference source {self.source!r}")
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise DomainError("reference losses must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def zero(cls, k: int) -> "ReferenceLosses":
        return cls("Zero", np.zeros(k))

    def shifted(self, c: float) -> "ReferenceLosses":
        return ReferenceLosses(self.source, self.values + c, self.alpha_star)

    def save(self, path) -> None:
        lines = [json.dumps({"source": self.source, "k": len(self)})]
        for i, v in enumerate(self.values):
            row = {"group": i, "l_ref": float(v)}
            if self.alpha_star is not None:
                row["alpha_star"] = np.asarray(self.alpha_star[i]).tolist()
            lines.append(json.dumps(row))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ReferenceLosses":
        rows = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
        header, body = rows[0], sorted(rows[1:], key=lambda r: r["group"])
        if len(body) != header["k"]:
            raise DomainError(f"{path}: expected {header['k']} groups, found {len(body)}")
        stars = [r.get("alpha_star") for r in body]
        return cls(header["source"], [r["l_ref"] for r in body],
                   None if any(s is None for s in stars) else np.array(stars))


@dataclass(frozen=True, eq=False)
class SampleWeights:
    weights: np.ndarray
    fallback: bool = False  # set when prediction errors were all zero

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.mean() - 1.0) > 1e-9:
            raise DomainError("sample weights must be nonnegative with mean 1")
        object.__setattr__(self, "weights", w)


def equal_weights(k: int) -> WeightVector:
    if k < 1:
        raise DomainError("k must be >= 1")
    return WeightVector(np.full(k, 1.0 / k))


def importance_weights(dataset: LabeledDataset) -> SampleWeights:
    """Per-pair weights proportional to 1 / rho_group, normalised to mean 1."""
    rho = empirical_proportions(dataset)
    raw = 1.0 / rho[dataset.groups]
    return SampleWeights(raw / raw.mean())


def delta(policy, dataset: LabeledDataset, refs) -> DeltaReport:
    return delta_from_losses(group_losses(policy, dataset), refs)


def delta_from_losses(losses, refs, alpha=None) -> DeltaReport:
    ref = np.asarray(getattr(refs, "values", refs), dtype=float)
    losses = np.asarray(losses, dtype=float)
    if ref.shape != losses.shape:
        raise DomainError(f"{ref.size} reference losses for {losses.size} groups")
    d = losses - ref
    return DeltaReport(d, -d.mean(), losses, None if alpha is None else np.array(alpha))


@dataclass
class MinMaxConfig:
    alpha_lr: float = 1.0
    outer_rounds: int = 200
    inner: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=5))
    delta_tol: float = 1e-3
    ascent: str = "projected"  # or "exponentiated"
    alpha_init: np.ndarray | None = None  # None: empirical proportions
    min_rounds: int = 1  # convergence is only declared from this round on

    def __post_init__(self):
        if not self.alpha_lr > 0:
            raise DomainError("alpha_lr must be positive")
        if self.outer_rounds < 1:
            raise DomainError("outer_rounds must be >= 1")
        if self.ascent not in ("projected", "exponentiated"):
            raise DomainError(f"unknown ascent {self.ascent!r}")


@dataclass
class MinMaxResult:
    alpha: WeightVector
    policy: object
    history: list  # DeltaReport per round, alpha attached
    converged: bool

    @property
    def status(self) -> str:
        return "converged" if self.converged else "unconverged"


def minmax_reweight(dataset: LabeledDataset, refs, cfg: MinMaxConfig, policy) -> MinMaxResult:
    """Alternate inner training at fixed alpha with an ascent step on alpha.

    Each round trains ``cfg.inner.epochs`` epochs on sum_i alpha_i L_i, then
    measures delta_i = L_i - L_ref_i and stops once max - min < delta_tol;
    otherwise alpha moves along delta + lambda. Round 0 starts from
    ``alpha_init`` (the empirical proportions by default).
    """
    k = dataset.k
    ref = np.atleast_1d(np.asarray(getattr(refs, "values", refs), dtype=float))
    if ref.size != k:
        raise DomainError("reference losses must have one entry per group")
    alpha = WeightVector(empirical_proportions(dataset) if cfg.alpha_init is None
                         else np.asarray(cfg.alpha_init, dtype=float))
    step = simplex_project_step if cfg.ascent == "projected" else simplex_eg_step
    inner = cfg.inner
    history = []
    converged = False
    for r in range(cfg.outer_rounds):
        policy, trace = train_weighted(dataset, alpha, inner, policy)
        inner = replace(inner, lr=trace.lr_final)
        rep = delta_from_losses(trace.final_group_losses, refs, alpha.alpha)
        history.append(rep)
        # centre losses and references separately so a constant shift of the
        # references cannot change a single bit of the update
        losses = rep.per_group_loss
        g = (losses - losses.mean()) - (ref - ref.mean())
        if r + 1 >= cfg.min_rounds and g.max() - g.min() < cfg.delta_tol:
            converged = True
            break
        if k > 1:
            alpha = step(alpha.alpha, g, cfg.alpha_lr)
    return MinMaxResult(alpha, policy, history, converged)


def reference_policy_targets(dataset: LabeledDataset, cfg: TrainConfig, policy) -> ReferenceLosses:
    """Per-group losses of a standard-BC policy trained on the raw data."""
    trained, _ = train_weighted(dataset, empirical_proportions(dataset), cfg, policy)
    return ReferenceLosses("ReferencePolicy", group_losses(trained, dataset))


@dataclass
class UpsampleResult:
    dataset: LabeledDataset
    buffer: LabeledDataset | None
    rounds: int
    fallback_rounds: int


def error_upsample(dataset: LabeledDataset, threshold: int | None = None, rounds_limit: int = 10,
                   split_ratio: float = 0.8, cfg: TrainConfig | None = None, policy=None,
                   seed: int = 0) -> UpsampleResult:
    """Grow a buffer of pairs resampled in proportion to a reference policy's error.

    Every round splits the data plus the buffer so far into train and
    validation parts, fits a fresh copy of ``policy`` on the train part, and
    draws (with replacement) validation pairs with probability proportional
    to ||mean(s) - a||. Stops once the buffer holds ``threshold`` pairs
    (default N/2) or after ``rounds_limit`` rounds. Group labels are carried
    along for reporting only.
    """
    n = len(dataset)
    if n < 10:
        raise DomainError("need at least 10 pairs")
    if not 0 < split_ratio < 1:
        raise DomainError("split_ratio must lie in (0, 1)")
    if policy is None:
        raise DomainError("a policy template is required")
    cfg = cfg or TrainConfig()
    target = n // 2 if threshold is None else int(threshold)
    if target <= 0:
        return UpsampleResult(dataset, None, 0, 0)
    rng = np.random.default_rng(seed)
    buffer = None
    rounds = fallbacks = 0
    while rounds < rounds_limit and (0 if buffer is None else len(buffer)) < target:
        pool = dataset if buffer is None else concat([dataset, buffer], dataset.k)
        m = len(pool)
        perm = rng.permutation(m)
        n_train = min(max(int(round(split_ratio * m)), 1), m - 1)
        train, val = pool.subset(perm[:n_train]), pool.subset(perm[n_train:])
        fitted, _ = train_weighted(train, _pooled_weights(train), cfg, policy)
        err = np.linalg.norm(fitted.mean(val.states) - val.actions, axis=1)
        if err.sum() > 0:
            p = err / err.sum()
        else:
            p = np.full(len(val), 1.0 / len(val))
            fallbacks += 1
        have = 0 if buffer is None else len(buffer)
        draw = rng.choice(len(val), size=min(len(val), target - have), replace=True, p=p)
        picked = val.subset(draw)
        buffer = picked if buffer is None else concat([buffer, picked], dataset.k)
        rounds += 1
    return UpsampleResult(concat([dataset, buffer], dataset.k), buffer, rounds, fallbacks)


def _pooled_weights(ds: LabeledDataset) -> np.ndarray:
    # plain BC on the split; groups absent from it simply get weight 0
    counts = ds.group_counts().astype(float)
    return counts / counts.sum()


def upsample_sample_weights(errors) -> SampleWeights:
    """Weights proportional to prediction error, mean 1; uniform if all errors vanish."""
    e = np.asarray(errors, dtype=float)
    if e.sum() <= 0:
        return SampleWeights(np.ones_like(e), fallback=True)
    return SampleWeights(e / e.mean())


def save_weights(path, strategy: str, alpha, refs_source: str | None = None,
                 sample_weights=None, history=(), converged: bool | None = None) -> None:
    a = np.asarray(alpha, dtype=float)
    header = {"strategy": strategy, "refs_source": refs_source, "k": int(a.size)}
    if converged is not None:
        header["converged"] = bool(converged)
    lines = [json.dumps(header), json.dumps({"alpha": a.tolist()})]
    if sample_weights is not None:
        lines.append(json.dumps({"sample_weights": np.asarray(
            getattr(sample_weights, "weights", sample_weights)).tolist()}))
    for r, rep in enumerate(history):
        lines.append(json.dumps({"round": r, **rep.to_dict()}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_weights(path) -> dict:
    rows = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    out = dict(rows[0])
    out["alpha"] = np.array(rows[1]["alpha"])
    out["history"] = [r for r in rows[2:] if "round" in r]
    for r in rows[2:]:
        if "sample_weights" in r:
            out["sample_weights"] = np.array(r["sample_weights"])
    return out


def table_row(method: str, alpha, refs=None) -> dict:
    """One row in the layout: method, per-group alpha, per-group reference loss."""
    a = np.asarray(alpha, dtype=float)
    row = {"method": method}
    for i, x in enumerate(a):
        row[f"alpha_{i + 1}"] = float(x)
    vals = None if refs is None else np.asarray(getattr(refs, "values", refs), dtype=float)
    for i in range(a.size):
        row[f"lref_{i + 1}"] = None if vals is None else float(vals[i])
    return row
