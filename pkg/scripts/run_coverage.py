"""Coverage ratio table of the five sampling heuristics on a dataset directory.

    python scripts/run_coverage.py data/WN18RR --ratios 0.1,0.2,0.5
"""

import argparse
import time
from pathlib import Path

from oneshot.evaluation import coverage_ratio, format_coverage_table
from oneshot.kg import augment_inverse, load_dataset
from oneshot.sampler import SamplerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("dataset", type=Path)
    ap.add_argument("--heuristics", default="rand,pr,rw,bfs,ppr")
    ap.add_argument("--ratios", default="0.1,0.2,0.5")
    ap.add_argument("--orientation", default="row", choices=("row", "column"))
    ap.add_argument("--max-queries", type=int, default=None)
    args = ap.parse_args()

    kg = augment_inverse(load_dataset(args.dataset))
    ratios = [float(r) for r in args.ratios.split(",")]
    t0 = time.perf_counter()
    table = coverage_ratio(
        kg, "test", args.heuristics.split(","), ratios, SamplerConfig(orientation=args.orientation),
        max_queries=args.max_queries,
    )
    print(format_coverage_table(table, args.dataset.name))
    print(f"{len(kg.test)} test queries, {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
