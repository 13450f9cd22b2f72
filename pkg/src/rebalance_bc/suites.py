"""Reproduction suites: each returns one pass/fail verdict per acceptance criterion."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .analytic import Box, SubPolicySpec, optimal_theta
from .core import LabeledDataset, empirical_proportions, normalize_states
from .datagen import GeneratorConfig, sample_dataset
from .harness import ExperimentPlan, ToySetup, run_plan, welch_t
from .metaref import MetaConfig, learn_alpha_star, meta_grad_alpha, target_loss_after
from .policy import LinearGaussianPolicy, MlpPolicy, grad_nll, nll
from .rebalance import MinMaxConfig, ReferenceLosses, minmax_reweight
from .trainer import TrainConfig, bound_check, train_weighted

SUITES = ("prop1", "metagrad", "minmax", "imbalance", "remix-failure", "meta-vs-baselines")


@dataclass
class Verdict:
    criterion: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.criterion}: {self.detail} ({self.seconds:.1f}s)"


# --- analytic linear checks ------------------------------------------------------

def linear_groups(thetas, rho, n, sigma=0.1, seed=0) -> LabeledDataset:
    """1-D linear-Gaussian groups with every group's E[s^2] rescaled to 1.

    States are drawn from disjoint intervals and rescaled per group; actions
    are then theta_i * s + N(0, sigma^2) on the rescaled states.
    """
    k = len(thetas)
    specs = [SubPolicySpec(np.array([t]), sigma, Box([1.0 + i], [2.0 + i]))
             for i, t in enumerate(thetas)]
    raw = sample_dataset(GeneratorConfig(specs, rho, n, seed))
    th = np.asarray(thetas, dtype=float)[raw.groups][:, None]
    noise = raw.actions - th * raw.states
    scaled, _ = normalize_states(raw, per_group=True)
    return scaled.replace(actions=th * scaled.states + noise, group_count=k)


PROP1_THETAS = (2.0, 0.0, -1.0)
PROP1_RHO = (0.6, 0.3, 0.1)
PROP1_TRAIN = TrainConfig(lr=0.5, epochs=200)


def _fit_linear(ds, alpha):
    return train_weighted(ds, alpha, PROP1_TRAIN, LinearGaussianPolicy.zeros(1, 1))


def suite_prop1(seeds=range(5)) -> list[Verdict]:
    out = []
    t0 = time.perf_counter()
    errs, bound_ok, worst_time, first_trace = [], True, 0.0, None
    for seed in seeds:
        t = time.perf_counter()
        ds = linear_groups(PROP1_THETAS, PROP1_RHO, 5000, seed=seed)
        rho_hat = empirical_proportions(ds)
        p, trace = _fit_linear(ds, rho_hat)
        worst_time = max(worst_time, time.perf_counter() - t)
        errs.append(abs(float(p.theta.ravel()[0]) - optimal_theta(rho_hat, PROP1_THETAS)))
        if first_trace is None:
            first_trace = (trace, rho_hat)
    ok = max(errs) < 0.02 and worst_time < 10
    out.append(Verdict("1 prop1 recovery", ok,
                       f"max |theta - sum rho_i theta_i| = {max(errs):.2e} over {len(errs)} seeds "
                       f"(tol 0.02), slowest run {worst_time:.2f}s", time.perf_counter() - t0))

    t = time.perf_counter()
    ds = linear_groups(PROP1_THETAS, PROP1_RHO, 5000, seed=0)
    p, _ = _fit_linear(ds, np.full(3, 1 / 3))
    err = abs(float(p.theta.ravel()[0]) - float(np.mean(PROP1_THETAS)))
    dt = time.perf_counter() - t
    out.append(Verdict("2 equal-weight optimum", err < 0.02 and dt < 10,
                       f"|theta - mean theta_i| = {err:.2e} (tol 0.02)", dt))

    t = time.perf_counter()
    trace, rho_hat = first_trace
    rep = bound_check(trace, rho_hat, slack=1e-6)
    out.append(Verdict("3 per-group bound", rep.ok,
                       f"{rep.checked} checks over {len(trace)} epochs, {len(rep.violations)} violations",
                       time.perf_counter() - t))
    return out


# --- gradient checks -------------------------------------------------------------

def _rel(a, b) -> float:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def policy_grad_errors(n_instances=20, seed=0, eps=1e-6) -> list[float]:
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(n_instances):
        ds, da = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        hidden = tuple(int(h) for h in rng.integers(2, 9, size=int(rng.integers(1, 3))))
        pol = MlpPolicy.create(ds, da, hidden, sigma=float(rng.uniform(0.5, 2.0)), seed=seed * 1000 + i)
        # random output layer too, else the gradient reaching hidden layers is zero
        pol = pol.with_params(pol.params + rng.normal(0, 0.5, pol.n_params))
        S, A = rng.normal(size=(20, ds)), rng.normal(size=(20, da))
        g = grad_nll(pol, S, A)
        p = pol.params
        fd = np.empty_like(p)
        for j in range(p.size):
            e = np.zeros_like(p)
            e[j] = eps
            fd[j] = (nll(pol.with_params(p + e), S, A).mean()
                     - nll(pol.with_params(p - e), S, A).mean()) / (2 * eps)
        errs.append(_rel(g, fd))
    return errs


def _meta_instance(rng, kind, seed):
    k = int(rng.integers(2, 4))
    d = int(rng.integers(1, 3))
    n = 30
    groups = np.concatenate([np.arange(k), rng.integers(0, k, size=n - k)])
    S = rng.normal(size=(n, d)) + groups[:, None]
    A = rng.normal(size=(n, d))
    ds = LabeledDataset(S, A, groups, k)
    if kind == "linear":
        pol = LinearGaussianPolicy(rng.normal(size=(d, d)) * 0.5)
    else:
        pol = MlpPolicy.create(d, d, (6,), seed=seed)
        pol = pol.with_params(pol.params + rng.normal(0, 0.3, pol.n_params))
    alpha = rng.dirichlet(np.ones(k))
    return ds, pol, alpha


def meta_grad_errors(kind: str, n_instances=10, seed=0, h=1e-5) -> list[float]:
    rng = np.random.default_rng(seed)
    errs = []
    for i in range(n_instances):
        ds, pol, alpha = _meta_instance(rng, kind, seed * 100 + i)
        steps = 1 + i % 3
        lr = 0.1
        target = int(rng.integers(0, ds.k))
        mg = meta_grad_alpha(pol, ds, alpha, target, lr, steps, "exact")
        fd = np.empty(ds.k)
        for j in range(ds.k):
            e = np.zeros(ds.k)
            e[j] = h
            fd[j] = (target_loss_after(pol, ds, alpha + e, target, lr, steps)
                     - target_loss_after(pol, ds, alpha - e, target, lr, steps)) / (2 * h)
        errs.append(_rel(mg, fd))
    return errs


def suite_metagrad() -> list[Verdict]:
    t = time.perf_counter()
    pg = policy_grad_errors()
    ml = meta_grad_errors("linear")
    mm = meta_grad_errors("mlp")
    dt = time.perf_counter() - t
    ok = max(pg) < 1e-4 and max(ml) < 1e-3 and max(mm) < 1e-2 and dt < 60
    detail = (f"max rel err: policy grad {max(pg):.1e} (20 MLPs, tol 1e-4), "
              f"meta-grad linear {max(ml):.1e} (tol 1e-3), MLP {max(mm):.1e} (tol 1e-2)")
    return [Verdict("4 gradient exactness", ok, detail, dt)]


# --- min-max on the symmetric linear case --------------------------------------------

MINMAX_THETAS = (1.0, -1.0)
MINMAX_RHO = (0.7, 0.3)


def minmax_case(seed=0):
    ds = linear_groups(MINMAX_THETAS, MINMAX_RHO, 2000, seed=seed)
    cfg = MinMaxConfig(alpha_lr=0.2, outer_rounds=500, delta_tol=1e-4,
                       inner=replace(PROP1_TRAIN, epochs=5))
    return ds, cfg


def grid_oracle(ds: LabeledDataset, refs, step=0.01) -> np.ndarray:
    """Brute-force saddle for k=2: maximise min_theta sum_i alpha_i (L_i - ref_i).

    The inner minimum is the closed-form weighted least-squares slope.
    """
    ref = np.asarray(refs, dtype=float)
    s, a = ds.states[:, 0], ds.actions[:, 0]
    sxx = np.array([np.mean(s[ds.groups == i] ** 2) for i in range(2)])
    sxy = np.array([np.mean(s[ds.groups == i] * a[ds.groups == i]) for i in range(2)])
    syy = np.array([np.mean(a[ds.groups == i] ** 2) for i in range(2)])
    best, arg = -np.inf, None
    for a1 in np.arange(0, 1 + step / 2, step):
        w = np.array([a1, 1 - a1])
        th = (w @ sxy) / (w @ sxx)
        losses = 0.5 * (th * th * sxx - 2 * th * sxy + syy)  # constant dropped
        val = w @ (losses - ref)
        if val > best:
            best, arg = val, w
    return arg


def suite_minmax() -> list[Verdict]:
    out = []
    t = time.perf_counter()
    ds, cfg = minmax_case()
    pol = LinearGaussianPolicy.zeros(1, 1)
    res = minmax_reweight(ds, ReferenceLosses.zero(2), cfg, pol)
    oracle = grid_oracle(ds, np.zeros(2))
    dt = time.perf_counter() - t
    spread = res.history[-1].spread
    gap_half = float(np.max(np.abs(res.alpha.alpha - 0.5)))
    gap_oracle = float(np.max(np.abs(res.alpha.alpha - oracle)))
    ok = res.converged and spread < 1e-3 and gap_half <= 0.02 and gap_oracle <= 0.02 and dt < 30
    out.append(Verdict("5 min-max convergence", ok,
                       f"converged={res.converged} after {len(res.history)} rounds, spread {spread:.1e}, "
                       f"alpha {np.round(res.alpha.alpha, 4).tolist()}, grid oracle {oracle.tolist()}", dt))

    t = time.perf_counter()
    refs = ReferenceLosses("Explicit", [0.25, 0.75])
    runs = [minmax_reweight(ds, r, replace(cfg, outer_rounds=60), pol) for r in (refs, refs.shifted(1.0))]
    same = (len(runs[0].history) == len(runs[1].history)
            and all(np.array_equal(x.alpha, y.alpha) for x, y in zip(runs[0].history, runs[1].history))
            and np.array_equal(runs[0].policy.params, runs[1].policy.params))
    out.append(Verdict("6 reference shift invariance", same,
                       f"{len(runs[0].history)} rounds, alpha and theta trajectories bit-identical: {same}",
                       time.perf_counter() - t))
    return out


# --- toy-environment experiments -------------------------------------------------

MIDDLE = 1  # the underrepresented region of the imbalanced recipe


def suite_imbalance(n_seeds=10, setup: ToySetup | None = None, workers=None) -> list[Verdict]:
    setup = setup or ToySetup()
    t = time.perf_counter()
    plan = ExperimentPlan("equal-weight", "imbalanced", ["standard", "equal", "minmax-refpolicy", "upsample"],
                          n_seeds=n_seeds, extra_conditions=[("balanced", "standard")], setup=setup)
    table = run_plan(plan, workers)
    dt = time.perf_counter() - t
    base = table.values("imbalanced/standard", "success", MIDDLE)
    bal = table.values("balanced/standard", "success", MIDDLE)
    out = []
    tt, p = welch_t(base, bal)
    out.append(Verdict("7 imbalance effect", base.mean() < bal.mean() and p < 0.05 and dt < 600,
                       f"middle success imbalanced {base.mean():.3f} vs balanced {bal.mean():.3f}, "
                       f"t={tt:.3f} p={p:.2e}, {len(base)} seeds", dt))
    parts, ok = [], True
    for strat in ("equal", "minmax-refpolicy"):
        v = table.values(f"imbalanced/{strat}", "success", MIDDLE)
        tt, p = welch_t(v, base)
        ok &= v.mean() > base.mean() and p < 0.05
        parts.append(f"{strat} {v.mean():.3f} (t={tt:.2f} p={p:.1e})")
    out.append(Verdict("8 rebalancing recovery", ok,
                       f"middle success vs baseline {base.mean():.3f}: " + ", ".join(parts), 0.0))
    ratios = []
    rho_mid = 1 / 7
    for counts in table.field("imbalanced/upsample", "buffer_counts")[:5]:
        c = np.asarray(counts, dtype=float)
        ratios.append(c[MIDDLE] / c.sum() / rho_mid)
    ok11 = len(ratios) >= min(5, n_seeds) and min(ratios) >= 1.5
    out.append(Verdict("11 error upsampling", ok11,
                       f"buffer middle fraction / rho over {len(ratios)} seeds: "
                       f"{np.round(ratios, 2).tolist()} (need >= 1.5)", 0.0))
    if table.failures:
        out.append(Verdict("runs", False, f"{len(table.failures)} failed runs", 0.0))
    return out


def suite_remix(n_seeds=10, setup: ToySetup | None = None, workers=None) -> list[Verdict]:
    setup = setup or ToySetup()
    t = time.perf_counter()
    plan = ExperimentPlan("remix-failure", "remix", ["minmax-refpolicy", "minmax-meta"],
                          n_seeds=n_seeds, setup=setup)
    table = run_plan(plan, workers)
    dt = time.perf_counter() - t
    ref_alpha = np.array(table.field("remix/minmax-refpolicy", "alpha"))
    star = np.array(table.field("remix/minmax-meta", "alpha_star"))  # (seeds, k, k)
    meta_alpha = np.array(table.field("remix/minmax-meta", "alpha"))
    out = [
        Verdict("9a refpolicy suboptimal mass", bool(np.all(ref_alpha[:, 1] >= 0.45)),
                f"suboptimal alpha per seed {np.round(ref_alpha[:, 1], 3).tolist()} (need >= 0.45)", dt),
        Verdict("9b meta optimal mass", bool(np.all(star[:, 0, 0] > 0.8)),
                f"alpha* for the optimal group, optimal mass per seed {np.round(star[:, 0, 0], 3).tolist()} "
                f"(need > 0.8); min-max alpha under meta references "
                f"{np.round(meta_alpha[:, 0], 3).tolist()}", 0.0),
    ]
    succ = {c: np.array(table.field(f"remix/{c}", "success")).mean(axis=1)
            for c in ("minmax-refpolicy", "minmax-meta")}
    m, r = succ["minmax-meta"].mean(), succ["minmax-refpolicy"].mean()
    out.append(Verdict("9c meta vs refpolicy success", m >= r,
                       f"mean success meta {m:.3f} vs refpolicy {r:.3f} over {len(succ['minmax-meta'])} seeds",
                       0.0))
    if table.failures:
        out.append(Verdict("runs", False, f"{len(table.failures)} failed runs", 0.0))
    return out


def suite_meta_vs_baselines(n_seeds=3, setup: ToySetup | None = None, workers=None) -> list[Verdict]:
    setup = setup or ToySetup()
    t = time.perf_counter()
    plan = ExperimentPlan("optimal-only", "imbalanced", ["minmax-refpolicy", "minmax-meta"],
                          n_seeds=n_seeds, setup=setup)
    table = run_plan(plan, workers)
    floor_gap, ref_gap = [], []
    for s in table.per_seed:
        res = s["results"]
        if "imbalanced/minmax-meta" not in res or "imbalanced/minmax-refpolicy" not in res:
            continue
        lmin = np.array(res["imbalanced/minmax-meta"]["refs"])
        final = np.array(res["imbalanced/minmax-meta"]["loss"])
        lref = np.array(res["imbalanced/minmax-refpolicy"]["refs"])
        floor_gap.append(float(np.min(final - lmin)))
        ref_gap.append(float(np.max(lmin - lref)))
    ok = bool(floor_gap) and min(floor_gap) >= -1e-6 and max(ref_gap) <= 1e-3 and not table.failures
    return [Verdict("10 reference floor", ok,
                    f"min(L_final - L_min) = {min(floor_gap, default=np.nan):.2e} (need >= -1e-6), "
                    f"max(L_min - L_ref) = {max(ref_gap, default=np.nan):.2e} (need <= 1e-3), "
                    f"{len(floor_gap)} seeds, {len(table.failures)} failures",
                    time.perf_counter() - t)]


def run_suite(name: str, **kw) -> list[Verdict]:
    fn = {"prop1": suite_prop1, "metagrad": suite_metagrad, "minmax": suite_minmax,
          "imbalance": suite_imbalance, "remix-failure": suite_remix,
          "meta-vs-baselines": suite_meta_vs_baselines}.get(name)
    if fn is None:
        raise KeyError(name)
    return fn(**kw)
