#!/usr/bin/env python3
"""Dataset-accumulation experiment: shallow decoder trained on ten sessions
vs one fresh session, cross-over evaluated on fresh placements."""

import argparse
import json

from myoloop.cli import write_report
from myoloop.experiments import BenchConfig, accumulation_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--blocks", type=int, default=24)
    parser.add_argument("--sessions", type=int, default=20)
    parser.add_argument("--reps", type=int, default=4)
    parser.add_argument("--out", default="accumulation_report.json")
    args = parser.parse_args()

    cfg = BenchConfig(
        seed=args.seed, blocks=args.blocks, n_sessions=args.sessions, repetitions=args.reps
    )
    report = accumulation_experiment(cfg)
    write_report(report, args.out)
    print(json.dumps(report["summary"], indent=2))
    for test in report["pairwise"]:
        print(f"{test['a']} vs {test['b']}: t={test['t']:.3f} p={test['p_two_sided']:.4f}")


if __name__ == "__main__":
    main()
