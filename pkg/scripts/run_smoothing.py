#!/usr/bin/env python3
"""Output-smoothing experiment: deep decoder on twenty sessions, with vs
without the Kalman smoother, plus the jerkiness comparison."""

import argparse
import json

import numpy as np

from myoloop.cli import write_report
from myoloop.experiments import BenchConfig, smoothing_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--blocks", type=int, default=24)
    parser.add_argument("--reps", type=int, default=4)
    parser.add_argument("--widths", default="4,8,16")
    parser.add_argument("--out", default="smoothing_report.json")
    args = parser.parse_args()

    cfg = BenchConfig(
        seed=args.seed,
        blocks=args.blocks,
        repetitions=args.reps,
        deep_widths=tuple(int(w) for w in args.widths.split(",")),
    )
    report = smoothing_experiment(cfg)
    write_report(report, args.out)
    print(json.dumps(report["summary"], indent=2))
    for test in report["pairwise"]:
        print(f"{test['a']} vs {test['b']}: t={test['t']:.3f} p={test['p_two_sided']:.4f}")
    print(
        "jerkiness (mean squared first difference): smoothed",
        f"{np.mean(report['msfd']['smoothed']):.5f} vs raw {np.mean(report['msfd']['raw']):.5f}",
    )


if __name__ == "__main__":
    main()
