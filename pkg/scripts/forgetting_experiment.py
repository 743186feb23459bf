"""Snapshot-0 MRR after the last snapshot: full model vs plain fine-tuning, per seed.

    python scripts/forgetting_experiment.py --seeds 0 1 2 3 4
"""

import argparse
import statistics

from ckge.experiments import run_variants


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    parser.add_argument("--epochs", type=int, default=100)
    args = parser.parse_args()

    variants = {"full": (False, False), "fine_tune": (True, True)}
    print(f"{'seed':>4}  {'full':>8}  {'fine_tune':>9}  {'gap':>8}  curve (full, averaged MRR per snapshot)")
    gaps = []
    for seed in args.seeds:
        out = run_variants(seed, variants, epochs=args.epochs)
        full, ft = out["full"].first_snapshot_mrr, out["fine_tune"].first_snapshot_mrr
        gaps.append(full - ft)
        curve = " ".join(f"{x:.3f}" for x in out["full"].per_snapshot)
        print(f"{seed:>4}  {full:8.4f}  {ft:9.4f}  {full - ft:+8.4f}  {curve}")
    wins = sum(g > 0 for g in gaps)
    print(f"full ahead in {wins}/{len(gaps)} seeds, mean gap {statistics.fmean(gaps):+.4f}")


if __name__ == "__main__":
    main()
