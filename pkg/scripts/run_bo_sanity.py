"""Random-forest BO on f(x) = -(x - 0.7)^2: how often the incumbent lands within 0.05 of the optimum."""

import argparse

import numpy as np

from oneshot.search import CONTINUOUS, Dimension, SearchSpace, bayes_opt, incumbent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--budget", type=int, default=30)
    ap.add_argument("--warm-start", type=int, default=5)
    args = ap.parse_args()

    space = SearchSpace([Dimension("x", CONTINUOUS, (0.0, 1.0))], "f")
    best = np.array([
        incumbent(bayes_opt(lambda c: -(c["x"] - 0.7) ** 2, space, args.budget, args.warm_start, seed=s)).config["x"]
        for s in range(args.runs)
    ])
    err = np.abs(best - 0.7)
    print(f"within 0.05: {np.sum(err <= 0.05)}/{args.runs}  median |x - 0.7| {np.median(err):.4f}  max {err.max():.4f}")


if __name__ == "__main__":
    main()
