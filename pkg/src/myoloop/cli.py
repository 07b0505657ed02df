"""Command-line entry point: participant synthesis, session recording,
decoder training, closed-loop evaluation, cross-over comparison, and the
live loop server.

Every subcommand is deterministic for fixed flags and seeds. Exit codes:
0 success, 1 usage error, 2 data/parse error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from . import stats
from .experiments import BenchConfig, bench_sessions, fit_smoother_for, train_decoder
from .fileformat import FormatError
from .nnet import TrainConfig, deep_spec, load_model, save_model, shallow_spec, train
from .synthem import (
    DEFAULT_SHIFT_MEAN_MM,
    ParticipantConfig,
    don_sleeve,
    make_participant,
    participant_from_json,
    participant_to_json,
)
from .taskbench import ExperimentPlan, OracleDecoder, run_experiment, run_trial, sample_target

USAGE_ERROR, DATA_ERROR, NUMERIC_ERROR = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_seed(value) -> int:
    if value is not None:
        return int(value)
    return int(os.environ.get("MYOLOOP_SEED", "0"))


def _load_participant(path):
    return participant_from_json(Path(path).read_text(encoding="utf-8"))


def write_report(report: dict, json_path):
    json_path = Path(json_path)
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    rows = report.get("trials")
    if rows:
        csv_path = json_path.with_suffix(".csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)


def cmd_participant(args) -> int:
    if args.target_snr <= 1.0:
        raise UsageError(f"--target-snr must exceed 1, got {args.target_snr}")
    config = ParticipantConfig(target_snr=args.target_snr)
    participant = make_participant(config, seed=_global_seed(args.seed))
    Path(args.out).write_text(participant_to_json(participant), encoding="utf-8")
    if args.verbose:
        print(f"wrote participant (seed {participant.seed}) to {args.out}")
    return 0


def cmd_record(args) -> int:
    if args.sessions < 1:
        raise UsageError(f"--sessions must be >= 1, got {args.sessions}")
    participant = _load_participant(args.participant)
    cfg = BenchConfig(
        seed=_global_seed(args.seed),
        n_sessions=args.sessions,
        repetitions=args.reps,
        shift_mean_mm=args.shift_mm,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, session in enumerate(bench_sessions(participant, cfg)):
        ds_mod.save(session, out_dir / f"session_{k:03d}.emgs")
    if args.verbose:
        print(f"wrote {args.sessions} sessions to {out_dir}")
    return 0


def cmd_train(args) -> int:
    sessions = [ds_mod.load(path) for path in args.data]
    ds = ds_mod.accumulate(sessions) if len(sessions) > 1 else sessions[0]
    if args.arch == "shallow":
        spec, stride = shallow_spec(), 1
    else:
        widths = tuple(int(w) for w in args.widths.split(","))
        spec, stride = deep_spec(widths=widths), args.stride
    train_x, train_y, val_x, val_y = ds_mod.supervised_arrays(ds, stride=stride)
    cfg = TrainConfig(max_epochs=args.max_epochs, seed=_global_seed(args.seed))
    decoder, history = train(spec, (train_x, train_y), (val_x, val_y), cfg, arch=args.arch)
    if args.kf:
        decoder.kalman = fit_smoother_for(decoder, train_x, train_y)
    save_model(decoder, args.out)
    print(f"validation RMSE {min(history.val_rmse):.4f} (stopped at epoch {history.stopped_epoch})")
    return 0


def cmd_eval(args) -> int:
    if args.trials < 1:
        raise UsageError(f"--trials must be >= 1, got {args.trials}")
    participant = _load_participant(args.participant)
    seed = _global_seed(args.seed)
    decoder = OracleDecoder() if args.oracle else load_model(args.model)
    kalman = None if args.oracle else decoder.kalman
    placement = don_sleeve(participant, args.shift_mm, seed=seed)
    holds, rows = [], []
    for j in range(args.trials):
        target = sample_target(np.random.default_rng(np.random.SeedSequence([seed, 0xE7A2, j])))
        trial_seed = int(np.random.SeedSequence([seed, 0xE7A3, j]).generate_state(1)[0])
        result = run_trial(
            decoder, participant, placement, target, seed=trial_seed, kalman=kalman
        )
        holds.append(result.hold_duration_s)
        rows.append(
            {
                "condition": "oracle" if args.oracle else "model",
                "block": j,
                "slot": 0,
                "seed": trial_seed,
                "hold_duration_s": result.hold_duration_s,
            }
        )
    report = {
        "model": str(args.model),
        "trials": rows,
        "summary": {"hold_duration_s": stats.mean_sem(holds)},
        "shift_mm": args.shift_mm,
        "seed": seed,
    }
    write_report(report, args.out)
    summary = report["summary"]["hold_duration_s"]
    print(f"mean hold {summary['mean']:.3f} s (SEM {summary['sem']:.3f}, n={summary['n']})")
    return 0


def cmd_compare(args) -> int:
    if len(args.models) < 2:
        raise UsageError("need at least two --models to compare")
    participant = _load_participant(args.participant)
    seed = _global_seed(args.seed)
    conditions, use_kalman = {}, {}
    for path in args.models:
        name = Path(path).stem
        while name in conditions:
            name += "_b"
        decoder = load_model(path)
        conditions[name] = decoder
        use_kalman[name] = decoder.kalman is not None
    plan = ExperimentPlan(list(conditions), blocks=args.blocks, seed=seed)
    block_env = {}

    def runner(name, block_idx, slot_idx, trial_seed):
        if block_idx not in block_env:
            placement = don_sleeve(
                participant,
                args.shift_mm,
                seed=int(np.random.SeedSequence([seed, 0xE7A1, block_idx]).generate_state(1)[0]),
            )
            target = sample_target(
                np.random.default_rng(np.random.SeedSequence([seed, 0xE7A2, block_idx]))
            )
            block_env[block_idx] = (placement, target)
        placement, target = block_env[block_idx]
        decoder = conditions[name]
        return run_trial(
            decoder,
            participant,
            placement,
            target,
            seed=trial_seed,
            kalman=decoder.kalman if use_kalman[name] else None,
            condition=name,
        )

    report = run_experiment(plan, runner)
    report["shift_mm"] = args.shift_mm
    write_report(report, args.out)
    for name, summary in report["summary"].items():
        print(f"{name}: mean hold {summary['mean']:.3f} s (SEM {summary['sem']:.3f})")
    for test in report["pairwise"]:
        print(f"{test['a']} vs {test['b']}: t={test['t']:.3f} p={test['p_two_sided']:.4f}")
    return 0


def cmd_serve(args) -> int:
    from . import loopserver

    participant = _load_participant(args.participant)
    decoder = load_model(args.model)
    placement = don_sleeve(participant, args.shift_mm, seed=_global_seed(args.seed))
    loopserver.serve(decoder, participant, placement, port=args.port, verbose=args.verbose)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="myoloop", description=__doc__)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("participant", help="synthesize a participant model")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--target-snr", type=float, default=14.0)
    p.set_defaults(func=cmd_participant)

    p = sub.add_parser("record", help="record training sessions")
    p.add_argument("--participant", required=True)
    p.add_argument("--sessions", type=int, default=20)
    p.add_argument("--shift-mm", type=float, default=DEFAULT_SHIFT_MEAN_MM)
    p.add_argument("--reps", type=int, default=4)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("train", help="train a decoder")
    p.add_argument("--arch", choices=["shallow", "deep"], required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--kf", action="store_true", help="fit the output smoother")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--widths", default="8,16,32")
    p.add_argument("--stride", type=int, default=1, help="training image subsampling")
    p.add_argument("--max-epochs", type=int, default=200)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop hold-duration evaluation")
    p.add_argument("--model", required=True)
    p.add_argument("--participant", required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--shift-mm", type=float, default=DEFAULT_SHIFT_MEAN_MM)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--oracle", action="store_true", help="bypass the model, decode intent directly")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="counterbalanced cross-over comparison")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--participant", required=True)
    p.add_argument("--blocks", type=int, default=20)
    p.add_argument("--shift-mm", type=float, default=DEFAULT_SHIFT_MEAN_MM)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="run the live 30 Hz loop server")
    p.add_argument("--model", required=True)
    p.add_argument("--participant", required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--shift-mm", type=float, default=DEFAULT_SHIFT_MEAN_MM)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (FormatError, json.JSONDecodeError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR
    except KeyboardInterrupt:
        return 0


if __name__ == "__main__":
    sys.exit(main())
