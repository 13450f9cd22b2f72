"""Print the learned weights and reference losses on the optimal/suboptimal mix.

One row per method (standard, zero, reference policy, meta-learned), with the
per-group alpha and L_ref, averaged over seeds.
"""
import argparse

import numpy as np

from rebalance_bc.core import empirical_proportions
from rebalance_bc.harness import ToySetup, apply_strategy, make_recipe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--recipe", default="remix", choices=("remix", "imbalanced"))
    args = ap.parse_args()
    setup = ToySetup()
    rows = {}
    for seed in range(args.seeds):
        data = make_recipe(args.recipe, setup, seed)
        rows.setdefault("standard", []).append((empirical_proportions(data), None))
        for s in ("minmax-zero", "minmax-refpolicy", "minmax-meta"):
            oc = apply_strategy(s, data, setup, seed)
            rows.setdefault(s, []).append((oc.alpha, oc.refs))
            if "alpha_star" in oc.extra:
                rows.setdefault("alpha* (per target)", []).append(
                    (np.asarray(oc.extra["alpha_star"]).diagonal(), None))
    print(f"{'method':22s} " + " ".join(f"alpha_{i + 1:<5d}" for i in range(len(rows['standard'][0][0])))
          + "  L_ref")
    for name, vals in rows.items():
        a = np.mean([v[0] for v in vals], axis=0)
        refs = [v[1] for v in vals if v[1] is not None]
        lref = "-" if not refs else " ".join(f"{x:.3f}" for x in np.mean(refs, axis=0))
        print(f"{name:22s} " + " ".join(f"{x:<11.4f}" for x in a) + f"  {lref}")


if __name__ == "__main__":
    main()
