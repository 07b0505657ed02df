#!/usr/bin/env python3
"""Longitudinal stability: a single-session shallow decoder evaluated
across ten fresh sleeve placements."""

import argparse
import json
from pathlib import Path

from myoloop.experiments import BenchConfig, longitudinal_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--placements", type=int, default=10)
    parser.add_argument("--trials", type=int, default=6)
    parser.add_argument("--reps", type=int, default=4)
    parser.add_argument("--out", default="longitudinal_report.json")
    args = parser.parse_args()

    cfg = BenchConfig(
        seed=args.seed,
        n_eval_placements=args.placements,
        trials_per_placement=args.trials,
        repetitions=args.reps,
        n_sessions=1,
    )
    report = longitudinal_experiment(cfg)
    Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    for p in report["placements"]:
        print(
            f"placement {p['placement']:2d} shift {p['shift_mm']:5.1f} mm "
            f"mean hold {p['mean']:.2f} s (SEM {p['sem']:.2f})"
        )
    print(f"minimum mean hold across placements: {report['min_mean_hold']:.3f} s")


if __name__ == "__main__":
    main()
