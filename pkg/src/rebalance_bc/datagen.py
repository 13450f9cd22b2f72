"""Synthetic demonstration data and a point-mass environment.

The environment is a 2-D point mass (state = position, action = velocity,
s' = s + a * dt) with three vertical strips side by side. A start in strip i
must be driven to that strip's goal; the expert for strip i is the
proportional controller a = gain * (goal_i - s), which keeps trajectories
inside the strip because the strip is convex and contains its goal.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .analytic import Box, SubPolicySpec, check_disjoint
from .core import DomainError, LabeledDataset, WeightVector, concat


def largest_remainder(proportions, total: int) -> np.ndarray:
    """Integer sizes proportional to ``proportions`` that sum to ``total``."""
    p = np.asarray(proportions, dtype=float)
    raw = p * total
    sizes = np.floor(raw).astype(int)
    short = total - sizes.sum()
    # stable sort keeps lower indices first among equal remainders
    order = np.argsort(-(raw - sizes), kind="stable")
    sizes[order[:short]] += 1
    return sizes


@dataclass
class GeneratorConfig:
    specs: list
    proportions: np.ndarray
    total_pairs: int
    seed: int = 0
    state_sampler: object = None  # callable(rng, spec, n) -> states; default uniform over region

    def __post_init__(self):
        self.proportions = WeightVector(np.asarray(self.proportions, dtype=float)).alpha
        if len(self.specs) != len(self.proportions):
            raise DomainError(f"{len(self.specs)} specs but {len(self.proportions)} proportions")
        if self.total_pairs < len(self.specs):
            raise DomainError("need at least one pair per group")
        check_disjoint(self.specs)


def sample_dataset(cfg: GeneratorConfig) -> LabeledDataset:
    sizes = largest_remainder(cfg.proportions, cfg.total_pairs)
    if np.any(sizes == 0):
        raise DomainError(f"rounded group sizes {sizes.tolist()} leave a group empty")
    rng = np.random.default_rng(cfg.seed)
    states, actions, groups = [], [], []
    for i, (spec, n) in enumerate(zip(cfg.specs, sizes)):
        if cfg.state_sampler is None:
            s = spec.region.sample(rng, int(n))
        else:
            s = np.atleast_2d(cfg.state_sampler(rng, spec, int(n)))
        mean = spec.mean_action(s)
        noise = rng.normal(0.0, 1.0, size=mean.shape) * spec.sigma
        states.append(s)
        actions.append(mean + noise)
        groups.append(np.full(int(n), i))
    return LabeledDataset(np.concatenate(states), np.concatenate(actions),
                          np.concatenate(groups), len(cfg.specs))


def relabel(dataset: LabeledDataset, mapping, group_count: int) -> LabeledDataset:
    mapping = np.asarray(mapping, dtype=np.int64)
    return dataset.replace(groups=mapping[dataset.groups], group_count=group_count)


def make_suboptimal(dataset: LabeledDataset, noise_scale: float, bias, seed: int = 0,
                    label_offset: int | None = None, group_count: int | None = None) -> LabeledDataset:
    """Copy with actions corrupted by ``bias + N(0, noise_scale^2)``.

    Group g becomes ``g + label_offset`` (default offset k, so k doubles).
    """
    if noise_scale < 0:
        raise DomainError("noise_scale must be nonnegative")
    k = dataset.k
    off = k if label_offset is None else label_offset
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=dataset.actions.shape) * noise_scale
    actions = dataset.actions + np.asarray(bias, dtype=float) + noise
    return LabeledDataset(dataset.states, actions, dataset.groups + off,
                          group_count if group_count is not None else k + off)


# --- point-mass environment ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class ToyRegion:
    name: str
    box: Box
    goal: np.ndarray


@dataclass
class ToyEnv:
    regions: list
    dt: float = 0.1
    horizon: int = 60
    success_radius: float = 0.1
    gain: float = 1.0
    noise: float = 0.02  # expert action noise used when generating demonstrations
    context_flag: int | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise DomainError("horizon must be >= 1")
        if not self.success_radius > 0:
            raise DomainError("success_radius must be positive")
        if not self.dt > 0:
            raise DomainError("dt must be positive")

    def step(self, s, a):
        return s + a * self.dt

    def region_of(self, states) -> np.ndarray:
        """Index of the region containing each state, or -1."""
        states = np.atleast_2d(states)
        out = np.full(len(states), -1)
        for i, r in enumerate(self.regions):
            out[(out < 0) & r.box.contains(states)] = i
        return out

    def goals(self) -> np.ndarray:
        return np.array([r.goal for r in self.regions])

    def specs(self) -> list[SubPolicySpec]:
        """Expert controllers as linear-Gaussian specs, one per region."""
        return [SubPolicySpec(theta=-self.gain * np.ones(r.box.dim), sigma=self.noise,
                              region=r.box, offset=self.gain * r.goal)
                for r in self.regions]

    def expert(self) -> "ExpertPolicy":
        return ExpertPolicy(self)


class ExpertPolicy:
    """Ground-truth mixture: dispatches on the region containing the state."""

    def __init__(self, env: ToyEnv):
        self.env = env

    def mean(self, states):
        states = np.atleast_2d(states)
        idx = self.env.region_of(states)
        goals = self.env.goals()[np.maximum(idx, 0)]
        a = self.env.gain * (goals - states)
        a[idx < 0] = 0.0
        return a

    def __call__(self, state):
        return self.mean(state)[0]


class ConstantPolicy:
    def __init__(self, action):
        self.action = np.asarray(action, dtype=float)

    def mean(self, states):
        return np.broadcast_to(self.action, (len(np.atleast_2d(states)), self.action.size)).copy()

    def __call__(self, state):
        return self.action.copy()


def default_env(**kw) -> ToyEnv:
    regions = [
        ToyRegion("left", Box([-3.0, -1.0], [-1.0, 1.0]), np.array([-2.0, 0.5])),
        ToyRegion("middle", Box([-1.0, -1.0], [1.0, 1.0]), np.array([0.0, -0.5])),
        ToyRegion("right", Box([1.0, -1.0], [3.0, 1.0]), np.array([2.0, 0.5])),
    ]
    return ToyEnv(regions, **kw)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def load_env_config(path) -> ToyEnv:
    """Read a ToyEnv from ``key = value`` lines (``#`` comments allowed).

    Recognised keys: dt, horizon, success_radius, gain, noise, context_flag,
    and ``regions`` as ``name:xlo,ylo,xhi,yhi:gx,gy`` entries separated by ``;``.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    with open(path) as fh:
        parser.read_string("[env]\n" + fh.read())
    sec = parser["env"]
    env = default_env()
    kw = {}
    for key, conv in (("dt", float), ("horizon", int), ("success_radius", float),
                      ("gain", float), ("noise", float), ("context_flag", int)):
        if key in sec:
            kw[key] = conv(sec[key])
    if "regions" in sec:
        regions = []
        for entry in sec["regions"].split(";"):
            name, box, goal = entry.strip().split(":")
            b = _floats(box)
            half = len(b) // 2
            regions.append(ToyRegion(name.strip(), Box(b[:half], b[half:]), np.array(_floats(goal))))
        env = ToyEnv(regions)
    return replace(env, **kw)


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    success: bool

    def __len__(self) -> int:
        return len(self.actions)


def _policy_mean(policy, states):
    if hasattr(policy, "mean"):
        return np.atleast_2d(policy.mean(states))
    return np.array([np.asarray(policy(s), dtype=float) for s in states])


def rollout(env: ToyEnv, policy, start_state, max_steps: int | None = None) -> Trajectory:
    """Run the policy mean from ``start_state`` until success or the horizon."""
    s = np.asarray(start_state, dtype=float)
    ridx = int(env.region_of(s)[0])
    if ridx < 0:
        raise DomainError(f"start state {s} lies outside every region")
    goal = env.regions[ridx].goal
    steps = env.horizon if max_steps is None else min(max_steps, env.horizon)
    states, actions = [s], []
    for _ in range(steps):
        a = _policy_mean(policy, s[None])[0]
        if not np.all(np.isfinite(a)):
            return Trajectory(np.array(states), np.array(actions).reshape(-1, s.size), False)
        s = env.step(s, a)
        states.append(s)
        actions.append(a)
        if np.linalg.norm(s - goal) < env.success_radius:
            return Trajectory(np.array(states), np.array(actions), True)
    return Trajectory(np.array(states), np.array(actions).reshape(-1, s.size), False)


def sample_starts(env: ToyEnv, n: int, regions, seed: int):
    regions = list(regions)
    if not regions:
        raise DomainError("region filter is empty")
    rng = np.random.default_rng(seed)
    which = np.asarray(regions)[rng.integers(0, len(regions), size=n)]
    starts = np.empty((n, env.regions[0].box.dim))
    for r in set(which.tolist()):
        m = which == r
        starts[m] = env.regions[r].box.sample(rng, int(m.sum()))
    return starts, which


def batch_success(env: ToyEnv, policy, starts, region_idx) -> np.ndarray:
    """Vectorised ``rollout(...).success`` over many starts."""
    s = np.array(starts, dtype=float)
    goals = env.goals()[region_idx]
    done = np.zeros(len(s), dtype=bool)
    alive = np.ones(len(s), dtype=bool)
    for _ in range(env.horizon):
        act = np.flatnonzero(alive & ~done)
        if act.size == 0:
            break
        a = _policy_mean(policy, s[act])
        bad = ~np.all(np.isfinite(a), axis=1)
        alive[act[bad]] = False
        ok = act[~bad]
        s[ok] = env.step(s[ok], a[~bad])
        done[ok] = np.linalg.norm(s[ok] - goals[ok], axis=1) < env.success_radius
    return done


def success_rate(env: ToyEnv, policy, n_rollouts: int, regions=None, seed: int = 0) -> float:
    if n_rollouts < 1:
        raise DomainError("n_rollouts must be >= 1")
    regions = range(len(env.regions)) if regions is None else regions
    starts, which = sample_starts(env, n_rollouts, regions, seed)
    return float(batch_success(env, policy, starts, which).mean())


def toy_dataset(env: ToyEnv, proportions, total_pairs: int, seed: int) -> LabeledDataset:
    """Expert demonstrations on ``env`` with the given per-region proportions."""
    return sample_dataset(GeneratorConfig(env.specs(), proportions, total_pairs, seed))
