"""Shared types and small math primitives.

Datasets are stored column-wise as numpy arrays (states, actions, group
labels) rather than as lists of pair objects; ``StateActionPair`` exists for
record-level ingestion and iteration.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Raised when an input violates an operation's preconditions."""


@dataclass(frozen=True)
class StateActionPair:
    state: np.ndarray
    action: np.ndarray
    group: int


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """State-action pairs with a required group label per pair."""

    states: np.ndarray
    actions: np.ndarray
    groups: np.ndarray
    group_count: int

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        actions = np.asarray(self.actions, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if actions.ndim == 1:
            actions = actions[:, None]
        if self.groups is None:
            raise DomainError("group labels are required")
        groups = np.asarray(self.groups).ravel()
        if groups.dtype.kind not in "iu":
            if groups.dtype.kind != "f" or not np.all(groups == np.round(groups)):
                raise DomainError("group labels must be integers")
        groups = groups.astype(np.int64)
        n = len(groups)
        if len(states) != n or len(actions) != n:
            raise DomainError(
                f"length mismatch: {len(states)} states, {len(actions)} actions, {n} labels"
            )
        if self.group_count < 1:
            raise DomainError("group_count must be >= 1")
        if n and (groups.min() < 0 or groups.max() >= self.group_count):
            raise DomainError(f"group labels must lie in [0, {self.group_count})")
        groups = groups.copy()
        groups.setflags(write=False)
        object.__setattr__(self, "states", _readonly(states))
        object.__setattr__(self, "actions", _readonly(actions))
        object.__setattr__(self, "groups", groups)

    def __len__(self) -> int:
        return len(self.groups)

    def __iter__(self) -> Iterator[StateActionPair]:
        for s, a, g in zip(self.states, self.actions, self.groups):
            yield StateActionPair(s, a, int(g))

    @property
    def k(self) -> int:
        return self.group_count

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @classmethod
    def from_pairs(cls, pairs: Iterable[StateActionPair], group_count: int) -> "LabeledDataset":
        pairs = list(pairs)
        if not pairs:
            raise DomainError("cannot build a dataset from zero pairs")
        sdims = {np.size(p.state) for p in pairs}
        adims = {np.size(p.action) for p in pairs}
        if len(sdims) != 1 or len(adims) != 1:
            raise DomainError("state and action dimensions must be constant across the dataset")
        if any(p.group is None for p in pairs):
            raise DomainError("every pair needs a group label")
        return cls(
            np.array([np.atleast_1d(p.state) for p in pairs], dtype=float),
            np.array([np.atleast_1d(p.action) for p in pairs], dtype=float),
            np.array([p.group for p in pairs], dtype=np.int64),
            group_count,
        )

    def group_counts(self) -> np.ndarray:
        return np.bincount(self.groups, minlength=self.group_count)

    def group_indices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.groups == i)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.states[idx], self.actions[idx], self.groups[idx], self.group_count)

    def replace(self, **kw) -> "LabeledDataset":
        fields = dict(states=self.states, actions=self.actions, groups=self.groups,
                      group_count=self.group_count)
        fields.update(kw)
        return LabeledDataset(**fields)


def concat(datasets: Sequence[LabeledDataset], group_count: int | None = None) -> LabeledDataset:
    if not datasets:
        raise DomainError("nothing to concatenate")
    k = group_count if group_count is not None else max(d.group_count for d in datasets)
    return LabeledDataset(
        np.concatenate([d.states for d in datasets]),
        np.concatenate([d.actions for d in datasets]),
        np.concatenate([d.groups for d in datasets]),
        k,
    )


@dataclass(frozen=True, eq=False)
class WeightVector:
    """A point on the probability simplex."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float).ravel()
        if a.size == 0:
            raise DomainError("weight vector must be nonempty")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise DomainError(f"weights must be finite and nonnegative, got {a}")
        if abs(a.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must sum to 1, got sum {a.sum()!r}")
        object.__setattr__(self, "alpha", _readonly(a))

    def __len__(self) -> int:
        return self.alpha.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.alpha, dtype=dtype)

    def tolist(self) -> list[float]:
        return self.alpha.tolist()

    @classmethod
    def normalized(cls, raw) -> "WeightVector":
        raw = np.clip(np.asarray(raw, dtype=float), 0.0, None)
        total = raw.sum()
        if not total > 0:
            raise DomainError("cannot normalize an all-zero weight vector")
        a = raw / total
        # one more pass pulls the float sum onto 1 to within an ulp or two
        return cls(a / a.sum())


@dataclass(frozen=True)
class DeltaReport:
    delta: np.ndarray
    lam: float
    per_group_loss: np.ndarray
    alpha: np.ndarray | None = None

    @property
    def projected(self) -> np.ndarray:
        return self.delta + self.lam

    @property
    def spread(self) -> float:
        return float(self.delta.max() - self.delta.min())

    def to_dict(self) -> dict:
        out = {"delta": self.delta.tolist(), "lambda": self.lam,
               "per_group_loss": self.per_group_loss.tolist()}
        if self.alpha is not None:
            out["alpha"] = np.asarray(self.alpha).tolist()
        return out


def kl_gaussian(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """KL(N(mu1, sigma1^2) || N(mu2, sigma2^2)) in nats."""
    if not (sigma1 > 0 and sigma2 > 0):
        raise DomainError(f"standard deviations must be positive, got {sigma1}, {sigma2}")
    return (math.log(sigma2 / sigma1)
            + (sigma1 ** 2 + (mu1 - mu2) ** 2) / (2.0 * sigma2 ** 2) - 0.5)


def empirical_proportions(dataset: LabeledDataset) -> np.ndarray:
    counts = dataset.group_counts()
    n = counts.sum()
    if n == 0:
        raise DomainError("empty dataset")
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DomainError(f"every declared group must be nonempty; empty groups: {empty.tolist()}")
    return counts / n


def exact_proportions(dataset: LabeledDataset) -> list[Fraction]:
    """Proportions as fractions; these sum to exactly 1."""
    counts = dataset.group_counts()
    n = int(counts.sum())
    if n == 0:
        raise DomainError("empty dataset")
    return [Fraction(int(c), n) for c in counts]


def normalize_states(dataset: LabeledDataset, per_group: bool = False):
    """Scale states so each dimension has mean square 1.

    With ``per_group=True`` each group is scaled by its own factors, which
    makes every group's E[s^2] equal to 1. Returns ``(dataset, scales)``;
    ``scales`` has shape (state_dim,) or (k, state_dim).
    """
    s = dataset.states
    if per_group:
        scales = np.empty((dataset.k, dataset.state_dim))
        out = np.empty_like(s)
        for i in range(dataset.k):
            idx = dataset.group_indices(i)
            if idx.size == 0:
                raise DomainError(f"group {i} is empty")
            scales[i] = _rms_scale(s[idx], f" in group {i}")
            out[idx] = s[idx] / scales[i]
    else:
        scales = _rms_scale(s, "")
        out = s / scales
    return dataset.replace(states=out), scales


def _rms_scale(s: np.ndarray, where: str) -> np.ndarray:
    rms = np.sqrt(np.mean(s ** 2, axis=0))
    zero = np.flatnonzero(rms == 0)
    if zero.size:
        raise DomainError(f"state dimension {int(zero[0])} is identically zero{where}")
    return rms


def simplex_project_step(alpha, raw_grad, step: float) -> WeightVector:
    """One projected ascent step on the simplex.

    The sum constraint is handled by the multiplier lam = -mean(raw_grad);
    negatives are clipped and the result renormalized.
    """
    if not step > 0:
        raise DomainError(f"step must be positive, got {step}")
    a = np.asarray(alpha, dtype=float)
    g = np.asarray(raw_grad, dtype=float)
    if g.shape != a.shape:
        raise DomainError(f"gradient has length {g.size}, expected {a.size}")
    lam = -g.mean()
    return WeightVector.normalized(a + step * (g + lam))


def simplex_eg_step(alpha, raw_grad, step: float) -> WeightVector:
    """Exponentiated-gradient (mirror ascent) step on the simplex."""
    if not step > 0:
        raise DomainError(f"step must be positive, got {step}")
    a = np.asarray(alpha, dtype=float)
    g = np.asarray(raw_grad, dtype=float)
    if g.shape != a.shape:
        raise DomainError(f"gradient has length {g.size}, expected {a.size}")
    z = step * (g - g.mean())
    return WeightVector.normalized(a * np.exp(z - z.max()))


# dataset file: JSON lines, header first

def save_dataset(dataset: LabeledDataset, path) -> None:
    lines = [json.dumps({"k": dataset.k, "state_dim": dataset.state_dim,
                         "action_dim": dataset.action_dim}, separators=(",", ":"))]
    for s, a, g in zip(dataset.states.tolist(), dataset.actions.tolist(), dataset.groups.tolist()):
        lines.append(json.dumps({"state": s, "action": a, "group": g}, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> LabeledDataset:
    with open(path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    if not rows:
        raise DomainError(f"{path}: empty file")
    header, records = rows[0], rows[1:]
    for key in ("k", "state_dim", "action_dim"):
        if key not in header:
            raise DomainError(f"{path}: header is missing {key!r}")
    if not records:
        raise DomainError(f"{path}: no records")
    for n, r in enumerate(records, start=2):
        if "group" not in r or r["group"] is None:
            raise DomainError(f"{path}:{n}: record has no group label")
        if len(r["state"]) != header["state_dim"] or len(r["action"]) != header["action_dim"]:
            raise DomainError(f"{path}:{n}: dimensions disagree with header")
    return LabeledDataset(
        np.array([r["state"] for r in records], dtype=float).reshape(-1, header["state_dim"]),
        np.array([r["action"] for r in records], dtype=float).reshape(-1, header["action_dim"]),
        np.array([r["group"] for r in records], dtype=np.int64),
        int(header["k"]),
    )
