"""Command-line entry point: ``rebalance-bc {gen,rebalance,repro}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. A JSON config file
(``--config``) supplies defaults for any flag of the chosen subcommand, keyed
by the flag's long name with dashes or underscores; explicit flags win.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import suites
from .analytic import Box, SubPolicySpec
from .core import DomainError, WeightVector, empirical_proportions, load_dataset, save_dataset
from .datagen import GeneratorConfig, default_env, load_env_config, sample_dataset, toy_dataset
from .metaref import MetaConfig, compute_reference_losses
from .policy import LinearGaussianPolicy, MlpPolicy, save_policy
from .rebalance import (MinMaxConfig, ReferenceLosses, equal_weights, error_upsample,
                        minmax_reweight, reference_policy_targets, save_weights, table_row)
from .trainer import TrainConfig, train_weighted

log = logging.getLogger("rebalance_bc")
REBALANCE_STRATEGIES = ("equal", "minmax-zero", "minmax-refpolicy", "minmax-meta", "upsample")


class UsageError(Exception):
    pass


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text) -> tuple[int, ...]:
    return tuple(int(x) for x in _floats(text))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rebalance-bc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a labelled demonstration dataset")
    g.add_argument("--config")
    g.add_argument("--k", type=int, default=2, help="number of groups")
    g.add_argument("--rho", default=None, help="group proportions, comma-separated, must sum to 1")
    g.add_argument("--n", type=int, default=1000, help="total number of pairs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--theta", default=None, help="1-D slope per group (default 0,1,...)")
    g.add_argument("--sigma", type=float, default=0.1, help="action noise std")
    g.add_argument("--toy", action="store_true", help="point-mass expert data instead of 1-D linear")
    g.add_argument("--env-config", default=None, help="key=value environment file (with --toy)")
    g.add_argument("--out", default="dataset.jsonl")

    r = sub.add_parser("rebalance", help="compute group weights for a dataset")
    r.add_argument("--config")
    r.add_argument("--data", required=False, default=None)
    r.add_argument("--strategy", choices=REBALANCE_STRATEGIES, default="equal")
    r.add_argument("--out-dir", default=".")
    r.add_argument("--policy", choices=("linear", "mlp"), default="mlp")
    r.add_argument("--hidden", default="32,32")
    r.add_argument("--sigma", type=float, default=1.0)
    r.add_argument("--lr", type=float, default=0.3)
    r.add_argument("--epochs", type=int, default=2000)
    r.add_argument("--alpha-lr", type=float, default=2.0)
    r.add_argument("--outer-rounds", type=int, default=600)
    r.add_argument("--min-rounds", type=int, default=1)
    r.add_argument("--inner-epochs", type=int, default=5)
    r.add_argument("--delta-tol", type=float, default=1e-3)
    r.add_argument("--meta-lr", type=float, default=100.0)
    r.add_argument("--meta-rounds", type=int, default=300)
    r.add_argument("--inner-steps", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("repro", help="run an acceptance suite")
    q.add_argument("--config")
    q.add_argument("suite", choices=suites.SUITES)
    q.add_argument("--seeds", type=int, default=None, help="seed count for the toy suites")
    q.add_argument("--report", default=None, help="write the verdicts as JSON here")
    return p


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        return action.choices[name]


def parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        if not isinstance(cfg, dict):
            parser.error("config file must hold a JSON object")
        sp = _subparser(parser, args.command)
        known = {a.dest for a in sp._actions}
        defaults = {}
        for key, val in cfg.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                parser.error(f"unknown config key {key!r}")
            defaults[dest] = val
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# --- gen ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    k = args.k
    if k < 1:
        raise UsageError("--k must be >= 1")
    rho = np.full(k, 1.0 / k) if args.rho is None else np.array(_floats(args.rho))
    if rho.size != k:
        raise UsageError(f"--rho has {rho.size} entries but --k is {k}")
    if np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-9:
        raise UsageError(f"proportions must be nonnegative and sum to 1 (got sum {rho.sum():.12g})")
    rho = rho / rho.sum()
    if args.n < k:
        raise UsageError("--n must be at least --k")
    try:
        if args.toy:
            env = load_env_config(args.env_config) if args.env_config else default_env()
            if len(env.regions) != k:
                raise UsageError(f"environment has {len(env.regions)} regions but --k is {k}")
            ds = toy_dataset(env, rho, args.n, args.seed)
        else:
            thetas = list(range(k)) if args.theta is None else _floats(args.theta)
            if len(thetas) != k:
                raise UsageError(f"--theta has {len(thetas)} entries but --k is {k}")
            specs = [SubPolicySpec(np.array([t]), args.sigma, Box([float(i)], [i + 1.0]))
                     for i, t in enumerate(thetas)]
            ds = sample_dataset(GeneratorConfig(specs, rho, args.n, args.seed))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    if not out.parent.exists():
        raise UsageError(f"output directory {out.parent} does not exist")
    save_dataset(ds, out)
    counts = ds.group_counts()
    print(f"wrote {len(ds)} pairs to {out}")
    print("counts " + ",".join(str(int(c)) for c in counts))
    print("rho " + ",".join(f"{c / len(ds):.6g}" for c in counts))
    return 0


# --- rebalance -----------------------------------------------------------------------

def _template(args, ds):
    if args.policy == "linear":
        return LinearGaussianPolicy.zeros(ds.state_dim, ds.action_dim, args.sigma)
    return MlpPolicy.create(ds.state_dim, ds.action_dim, _ints(args.hidden), args.sigma, args.seed)


def cmd_rebalance(args) -> int:
    if not args.data:
        raise UsageError("--data is required")
    if not Path(args.data).is_file():
        raise UsageError(f"dataset {args.data} not found")
    out = Path(args.out_dir)
    if not out.is_dir():
        raise UsageError(f"output directory {out} does not exist")
    ds = load_dataset(args.data)
    tc = TrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed)
    p0 = _template(args, ds)
    strategy = args.strategy
    refs = None
    sample_weights = None
    history, converged, policy = (), None, None
    if strategy == "equal":
        alpha = equal_weights(ds.k)
    elif strategy == "upsample":
        up = error_upsample(ds, len(ds) // 2, cfg=tc, policy=p0, seed=args.seed)
        alpha = WeightVector(empirical_proportions(up.dataset))
        # per-pair weights on the original data: 1 + copies in the buffer
        sample_weights = _buffer_multiplicity(ds, up)
        log.info("upsample: %d rounds, buffer %d pairs", up.rounds, len(up.buffer or ()))
    else:
        kind = strategy.split("-", 1)[1]
        if kind == "zero":
            refs = ReferenceLosses.zero(ds.k)
        elif kind == "refpolicy":
            refs = reference_policy_targets(ds, tc, p0)
        else:
            mc = MetaConfig(inner_lr=args.lr, meta_lr=args.meta_lr, meta_rounds=args.meta_rounds,
                            inner_steps=args.inner_steps, seed=args.seed, final=tc)
            refs = compute_reference_losses(ds, mc, p0)
        refs.save(out / "refs.jsonl")
        mm = MinMaxConfig(alpha_lr=args.alpha_lr, outer_rounds=args.outer_rounds,
                          min_rounds=args.min_rounds, delta_tol=args.delta_tol,
                          inner=TrainConfig(lr=args.lr, epochs=args.inner_epochs, seed=args.seed))
        res = minmax_reweight(ds, refs, mm, p0)
        alpha, history, converged, policy = res.alpha, res.history, res.converged, res.policy
    if policy is None:
        policy, _ = train_weighted(ds, alpha, tc, p0)
    save_weights(out / "weights.jsonl", strategy, alpha.alpha,
                 None if refs is None else refs.source, sample_weights, history, converged)
    save_policy(policy, out / "policy.json")
    row = table_row(strategy, alpha.alpha, refs)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
    print("alpha " + ",".join(f"{a:.6g}" for a in alpha.alpha))
    if refs is not None:
        print(f"refs ({refs.source}) " + ",".join(f"{v:.6g}" for v in refs.values))
    if converged is not None:
        print("status " + ("converged" if converged else "unconverged"))
    print(f"wrote {out / 'weights.jsonl'}")
    return 0


def _buffer_multiplicity(ds, up) -> np.ndarray:
    w = np.ones(len(ds))
    if up.buffer is None:
        return w
    index = {(s.tobytes(), a.tobytes()): i for i, (s, a) in enumerate(zip(ds.states, ds.actions))}
    for s, a in zip(up.buffer.states, up.buffer.actions):
        i = index.get((s.tobytes(), a.tobytes()))
        if i is not None:
            w[i] += 1
    return w / w.mean()


# --- repro -------------------------------------------------------------------------

def cmd_repro(args) -> int:
    kw = {}
    if args.seeds is not None:
        if args.suite not in ("imbalance", "remix-failure", "meta-vs-baselines"):
            raise UsageError(f"--seeds does not apply to suite {args.suite}")
        if args.seeds < 2 and args.suite != "meta-vs-baselines":
            raise UsageError("--seeds must be >= 2 for a statistical comparison")
        kw["n_seeds"] = args.seeds
    verdicts = suites.run_suite(args.suite, **kw)
    for v in verdicts:
        print(v.line())
    if args.report:
        Path(args.report).write_text(json.dumps([v.__dict__ for v in verdicts], indent=1))
    return 0 if all(v.passed for v in verdicts) else 1


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    handler = {"gen": cmd_gen, "rebalance": cmd_rebalance, "repro": cmd_repro}[args.command]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"rebalance-bc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, RuntimeError, OSError, ValueError) as exc:
        print(f"rebalance-bc {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
