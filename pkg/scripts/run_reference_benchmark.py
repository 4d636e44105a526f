#!/usr/bin/env python3
"""Run the reference benchmark condition with both derivative families.

Prints a compact recovery table (median relative bias with percentile
range, N10, coverage, median reconstruction R-squared) next to the
published values bundled with the package, so regressions in the
estimation pipeline show up as drifting rows.
"""

import argparse
import sys
from importlib import resources

from selfreg import reference_conditions
from selfreg.study import run_condition, summarize


def load_published() -> dict:
    text = resources.files("selfreg").joinpath(
        "data/reference_values.csv").read_text()
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    table = {}
    for raw in lines[1:]:
        row = dict(zip(header, raw.split(",")))
        key = (int(row["condition_id"]), row["family"], row["parameter"])
        table[key] = row
    return table


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-reps", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--condition", type=int, default=1,
                        help="benchmark condition number (1-17)")
    args = parser.parse_args(argv)

    cells = reference_conditions()
    if args.condition not in cells:
        parser.error(f"--condition must be 1..17, got {args.condition}")
    condition = cells[args.condition]
    published = load_published()

    print(f"condition {args.condition}: decay_time="
          f"{condition.mean_params.decay_time:g} shape="
          f"{condition.shape.label()} n_obs={condition.n_obs} "
          f"n_indiv={condition.n_indiv} stn={condition.stn_pct:g}% "
          f"regression={condition.regression} "
          f"homogeneous={condition.homogeneous}")
    print(f"{args.n_reps} replications per family, seed {args.seed}")
    print()
    header = (f"{'family':8s} {'parameter':10s} {'bias ours':>18s} "
              f"{'bias published':>18s} {'N10':>6s} {'pub':>6s} "
              f"{'cov':>6s} {'pub':>6s}")
    print(header)
    print("-" * len(header))
    for family in ("glla", "spline"):
        run = run_condition(condition, family, n_reps=args.n_reps,
                            base_seed=args.seed, workers=args.workers)
        s = summarize(run)
        for p in s.params:
            ours = f"{p.median:.0f} [{p.lo:.0f};{p.hi:.0f}]"
            ref = published.get((args.condition, family, p.name))
            if ref:
                pub = (f"{ref['bias_median']} [{ref['bias_lo']};"
                       f"{ref['bias_hi']}]")
                pub_n10, pub_cov = ref["n10"], ref["coverage"]
            else:
                pub = pub_n10 = pub_cov = "-"
            print(f"{family:8s} {p.name:10s} {ours:>18s} {pub:>18s} "
                  f"{p.n10:6.1f} {pub_n10:>6s} {p.coverage:6.1f} "
                  f"{pub_cov:>6s}")
        print(f"{family:8s} smoothing={s.smoothing:g} "
              f"r2_indiv={s.r2_indiv_median:.2f} "
              f"r2_fixed={s.r2_fixed_median:.2f} "
              f"failed={s.n_failed}/{s.n_reps}")
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main())
