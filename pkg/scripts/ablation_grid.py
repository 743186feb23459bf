"""Averaged continual MRR of every ablation variant, per seed, with an optional CSV dump."""

import argparse
import csv
import statistics
import sys

from ckge.experiments import VARIANTS, run_variants


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--csv", help="write seed,variant,first_snapshot_mrr,averaged_mrr,seconds rows here")
    args = parser.parse_args()

    names = list(VARIANTS)
    rows = []
    print(f"{'seed':>4}  " + "  ".join(f"{n:>10}" for n in names))
    for seed in args.seeds:
        out = run_variants(seed, epochs=args.epochs)
        rows.extend(out[n] for n in names)
        print(f"{seed:>4}  " + "  ".join(f"{out[n].averaged_mrr:10.4f}" for n in names))
    means = {n: statistics.fmean(r.averaged_mrr for r in rows if r.variant == n) for n in names}
    print(f"{'mean':>4}  " + "  ".join(f"{means[n]:10.4f}" for n in names))

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "variant", "first_snapshot_mrr", "averaged_mrr", "seconds"])
            for r in rows:
                w.writerow([r.seed, r.variant, repr(r.first_snapshot_mrr), repr(r.averaged_mrr), f"{r.seconds:.2f}"])
        print(f"wrote {args.csv}", file=sys.stderr)


if __name__ == "__main__":
    main()
