"""Run one preset scenario on the point-mass task and export its result table.

    python3 scripts/run_scenario.py imbalance-effect --seeds 10 --out results/
"""
import argparse
from pathlib import Path

from rebalance_bc.harness import SCENARIOS, preset, run_plan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--rollouts", type=int, default=100)
    ap.add_argument("--base-seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None, help="default: $REBALANCE_BC_THREADS or 1")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    plan = preset(args.scenario, n_seeds=args.seeds, rollouts=args.rollouts, base_seed=args.base_seed)
    table = run_plan(plan, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = out / args.scenario
    table.to_csv(f"{stem}.csv")
    table.to_json(f"{stem}.json")
    table.to_plot_data(f"{stem}.plot.csv")
    for r in table.rows:
        if r.metric == "success":
            print(f"{r.condition:28s} {r.group:7s} {r.mean:.3f} +- {r.std:.3f} (n={r.n})")
    for f in table.failures:
        print(f"FAILED seed {f['seed']} {f['condition']}: {f['error']}")


if __name__ == "__main__":
    main()
