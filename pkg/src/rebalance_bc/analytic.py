"""Closed-form results for linear-Gaussian sub-policies under normalized states."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned state region [low, high]."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.low, dtype=float))
        hi = np.atleast_1d(np.asarray(self.high, dtype=float))
        if lo.shape != hi.shape or np.any(hi < lo):
            raise DomainError(f"bad region bounds {lo} .. {hi}")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @property
    def dim(self) -> int:
        return self.low.size

    def contains(self, s) -> np.ndarray:
        s = np.atleast_2d(s)
        return np.all((s >= self.low) & (s <= self.high), axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def overlaps(self, other: "Box") -> bool:
        # touching faces count as disjoint; boundary points have measure zero
        return bool(np.all(self.low < other.high) and np.all(other.low < self.high))


@dataclass(frozen=True, eq=False)
class SubPolicySpec:
    """Ground-truth behaviour a = theta * s + offset + N(0, sigma^2), on ``region``.

    ``theta`` acts element-wise (scalar or one gain per dimension).
    ``offset`` defaults to zero; the toy environment uses it to encode goals.
    """

    theta: np.ndarray | float
    sigma: float
    region: Box
    offset: np.ndarray | float = 0.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise DomainError(f"sigma must be nonnegative, got {self.sigma}")
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "offset", np.atleast_1d(np.asarray(self.offset, dtype=float)))

    def mean_action(self, states: np.ndarray) -> np.ndarray:
        return np.atleast_2d(states) * self.theta + self.offset


def check_disjoint(specs) -> None:
    for i, a in enumerate(specs):
        for j in range(i + 1, len(specs)):
            if a.region.overlaps(specs[j].region):
                raise DomainError(f"regions of specs {i} and {j} overlap")


def optimal_theta(weights, thetas):
    """Weighted combination of the per-behaviour gains (the BC optimum)."""
    w = np.asarray(weights, dtype=float)
    t = np.asarray(thetas, dtype=float)
    if w.ndim != 1 or t.shape[0] != w.size:
        raise DomainError(f"length mismatch: {w.size} weights, {t.shape[0]} thetas")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise DomainError("weights must lie on the simplex")
    out = np.tensordot(w, t, axes=1)
    return float(out) if np.ndim(out) == 0 else out


def worst_case_bound(total_loss: float, rho_i: float) -> float:
    """Upper bound on one group's expected KL given the weighted total."""
    if not rho_i > 0:
        raise DomainError(f"group weight must be positive, got {rho_i}")
    if total_loss < 0:
        raise DomainError("total loss must be nonnegative")
    return total_loss / rho_i


def equal_weight_bound(total_loss: float, k: int) -> float:
    return worst_case_bound(total_loss, 1.0 / k)


def expected_bc_loss_linear(theta, specs, weights, robot_sigma: float = 1.0) -> float:
    """Population KL(pi_i || pi_theta) averaged with ``weights``, assuming E[s^2] = 1.

    Keeps every term of the Gaussian KL, so values are comparable across
    noise settings. Vector gains contribute one term per dimension.
    """
    if not robot_sigma > 0:
        raise DomainError("robot sigma must be positive")
    w = np.asarray(weights, dtype=float)
    if w.size != len(specs):
        raise DomainError(f"{w.size} weights for {len(specs)} specs")
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    total = 0.0
    for wi, spec in zip(w, specs):
        if not spec.sigma > 0:
            raise DomainError("sub-policy sigma must be positive")
        diff = spec.theta - th
        kl = (math.log(robot_sigma / spec.sigma)
              + (spec.sigma ** 2 + diff ** 2) / (2 * robot_sigma ** 2) - 0.5)
        total += wi * float(np.sum(kl))
    return total
