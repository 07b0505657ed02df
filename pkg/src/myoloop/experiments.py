"""Bench experiments: dataset accumulation, output smoothing, and
longitudinal stability, all on one synthetic participant with per-session
electrode shift.

Every experiment is a pure function of its BenchConfig; session recording,
training, placements, targets, and trials all derive from explicit seed
streams, so reports are exactly reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import (
    RecordingProtocol,
    SessionDataset,
    accumulate,
    record_session,
    supervised_arrays,
)
from .kalman import KalmanParams, fit_output_smoother, mean_squared_first_difference
from .nnet import Decoder, TrainConfig, deep_spec, shallow_spec, train
from .synthem import DEFAULT_SHIFT_MEAN_MM, ParticipantModel, don_sleeve, make_participant
from .taskbench import ExperimentPlan, plan_orders, run_trial, sample_target
from . import stats

# seed stream tags
_SESSION_PLACEMENT = 0xA110
_SESSION_PROTOCOL = 0xA111
_SESSION_EMG = 0xA112
_EVAL_PLACEMENT = 0xE7A1
_EVAL_TARGET = 0xE7A2
_EVAL_TRIAL = 0xE7A3


@dataclass
class BenchConfig:
    participant_seed: int = 0
    seed: int = 42
    n_sessions: int = 20
    repetitions: int = 4
    shift_mean_mm: float = DEFAULT_SHIFT_MEAN_MM
    blocks: int = 24
    n_eval_placements: int = 10
    trials_per_placement: int = 6
    deep_widths: tuple = (4, 8, 16)
    deep_image_stride: int = 3
    max_epochs: int = 200
    speed_range: tuple = (0.8, 1.2)
    hold_range: tuple = (1.5, 2.5)


def _derive_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def bench_sessions(participant: ParticipantModel, cfg: BenchConfig) -> list[SessionDataset]:
    """Record n_sessions, each with a fresh don and its own speed/hold draw."""
    sessions = []
    for k in range(cfg.n_sessions):
        placement = don_sleeve(
            participant, cfg.shift_mean_mm, seed=_derive_seed(cfg.seed, _SESSION_PLACEMENT, k)
        )
        rng = np.random.default_rng(_derive_seed(cfg.seed, _SESSION_PROTOCOL, k))
        protocol = RecordingProtocol(
            repetitions=cfg.repetitions,
            speed_scale=float(rng.uniform(*cfg.speed_range)),
            hold_s=float(rng.uniform(*cfg.hold_range)),
        )
        sessions.append(
            record_session(
                participant,
                placement,
                protocol,
                seed=_derive_seed(cfg.seed, _SESSION_EMG, k),
                session_id=f"session_{k:03d}",
            )
        )
    return sessions


def train_decoder(
    sessions: list[SessionDataset],
    arch: str,
    cfg: BenchConfig,
    train_seed: int,
    with_kf: bool = False,
) -> Decoder:
    """Accumulate, split 97/3, train, optionally fit the output smoother."""
    ds = accumulate(sessions) if len(sessions) > 1 else sessions[0]
    if arch == "shallow":
        spec, stride = shallow_spec(), 1
    elif arch == "deep":
        spec, stride = deep_spec(widths=cfg.deep_widths), cfg.deep_image_stride
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    train_x, train_y, val_x, val_y = supervised_arrays(ds, stride=stride)
    decoder, history = train(
        spec,
        (train_x, train_y),
        (val_x, val_y),
        TrainConfig(max_epochs=cfg.max_epochs, seed=train_seed),
        arch=arch,
    )
    if with_kf:
        decoder.kalman = fit_smoother_for(decoder, train_x, train_y)
    return decoder


def fit_smoother_for(decoder: Decoder, train_x: np.ndarray, train_y: np.ndarray) -> KalmanParams:
    """Kalman smoother over the decoder's own training-set predictions."""
    preds = np.concatenate(
        [
            decoder.forward_batch(train_x[lo : lo + 512])
            for lo in range(0, train_x.shape[0], 512)
        ]
    )
    return fit_output_smoother(train_y.astype(np.float64), preds.astype(np.float64))


def crossover_compare(
    participant: ParticipantModel,
    conditions: dict,
    cfg: BenchConfig,
    use_kalman: dict | None = None,
) -> dict:
    """Counterbalanced cross-over: per block one fresh placement and target,
    every condition run once with its own trial noise seed."""
    names = list(conditions)
    plan = ExperimentPlan(names, blocks=cfg.blocks, seed=cfg.seed)
    use_kalman = use_kalman or {}
    block_env = {}

    def runner(name, block_idx, slot_idx, seed):
        if block_idx not in block_env:
            placement = don_sleeve(
                participant,
                cfg.shift_mean_mm,
                seed=_derive_seed(cfg.seed, _EVAL_PLACEMENT, block_idx),
            )
            target = sample_target(
                np.random.default_rng(_derive_seed(cfg.seed, _EVAL_TARGET, block_idx))
            )
            block_env[block_idx] = (placement, target)
        placement, target = block_env[block_idx]
        decoder = conditions[name]
        return run_trial(
            decoder,
            participant,
            placement,
            target,
            seed=seed,
            kalman=decoder.kalman if use_kalman.get(name) else None,
            condition=name,
        )

    from .taskbench import run_experiment

    return run_experiment(plan, runner)


def accumulation_experiment(
    cfg: BenchConfig,
    participant: ParticipantModel | None = None,
    sessions: list[SessionDataset] | None = None,
) -> dict:
    """Shallow decoder on the first ten sessions vs on the freshest single
    session, cross-over on fresh placements."""
    participant = participant or make_participant(seed=cfg.participant_seed)
    sessions = sessions or bench_sessions(participant, cfg)
    started = time.perf_counter()
    dec_many = train_decoder(sessions[:10], "shallow", cfg, train_seed=_derive_seed(cfg.seed, 1))
    dec_one = train_decoder(sessions[-1:], "shallow", cfg, train_seed=_derive_seed(cfg.seed, 2))
    report = crossover_compare(
        participant,
        {"shallow_10_sessions": dec_many, "shallow_1_session": dec_one},
        cfg,
    )
    report["experiment"] = "accumulation"
    report["wall_time_s"] = time.perf_counter() - started
    report["val_rmse"] = {
        "shallow_10_sessions": dec_many.history.get("val_rmse", []),
        "shallow_1_session": dec_one.history.get("val_rmse", []),
    }
    return report


def smoothing_experiment(
    cfg: BenchConfig,
    participant: ParticipantModel | None = None,
    sessions: list[SessionDataset] | None = None,
    deep: Decoder | None = None,
) -> dict:
    """Deep decoder on all sessions, with vs without the Kalman smoother."""
    participant = participant or make_participant(seed=cfg.participant_seed)
    sessions = sessions or bench_sessions(participant, cfg)
    started = time.perf_counter()
    if deep is None:
        deep = train_decoder(
            sessions, "deep", cfg, train_seed=_derive_seed(cfg.seed, 3), with_kf=True
        )
    if deep.kalman is None:
        raise ValueError("smoothing experiment needs a deep decoder with a fitted smoother")
    report = crossover_compare(
        participant,
        {"deep_kf": deep, "deep_raw": deep},
        cfg,
        use_kalman={"deep_kf": True, "deep_raw": False},
    )
    # jerkiness on identical inputs: within each KF trial, compare the
    # smoothed stream against the raw network stream it was fed
    msfd = {"smoothed": [], "raw": []}
    for block_idx in range(cfg.blocks):
        placement = don_sleeve(
            participant, cfg.shift_mean_mm, seed=_derive_seed(cfg.seed, _EVAL_PLACEMENT, block_idx)
        )
        target = sample_target(
            np.random.default_rng(_derive_seed(cfg.seed, _EVAL_TARGET, block_idx))
        )
        seed = _derive_seed(cfg.seed, _EVAL_TRIAL, block_idx)
        result = run_trial(
            deep, participant, placement, target, seed=seed, kalman=deep.kalman
        )
        msfd["smoothed"].append(mean_squared_first_difference(result.decoded))
        msfd["raw"].append(mean_squared_first_difference(result.raw_decoded))
    report["experiment"] = "smoothing"
    report["wall_time_s"] = time.perf_counter() - started
    report["msfd"] = msfd
    report["msfd_all_reduced"] = bool(
        all(s < r for s, r in zip(msfd["smoothed"], msfd["raw"]))
    )
    report["val_rmse"] = {"deep": deep.history.get("val_rmse", [])}
    return report


def longitudinal_experiment(
    cfg: BenchConfig,
    participant: ParticipantModel | None = None,
    sessions: list[SessionDataset] | None = None,
    decoder: Decoder | None = None,
) -> dict:
    """Session-1 shallow decoder across fresh placements: holds must never
    collapse to zero."""
    participant = participant or make_participant(seed=cfg.participant_seed)
    sessions = sessions or bench_sessions(participant, cfg)
    started = time.perf_counter()
    if decoder is None:
        decoder = train_decoder(sessions[:1], "shallow", cfg, train_seed=_derive_seed(cfg.seed, 4))
    placements = []
    for k in range(cfg.n_eval_placements):
        placement = don_sleeve(
            participant, cfg.shift_mean_mm, seed=_derive_seed(cfg.seed, _EVAL_PLACEMENT, 1000 + k)
        )
        holds = []
        for j in range(cfg.trials_per_placement):
            target = sample_target(
                np.random.default_rng(_derive_seed(cfg.seed, _EVAL_TARGET, 1000 + k, j))
            )
            result = run_trial(
                decoder,
                participant,
                placement,
                target,
                seed=_derive_seed(cfg.seed, _EVAL_TRIAL, 1000 + k, j),
            )
            holds.append(result.hold_duration_s)
        placements.append(
            {
                "placement": k,
                "shift_mm": float(np.hypot(*placement.session_shift)),
                "holds": holds,
                **stats.mean_sem(holds),
            }
        )
    return {
        "experiment": "longitudinal",
        "wall_time_s": time.perf_counter() - started,
        "placements": placements,
        "min_mean_hold": min(p["mean"] for p in placements),
    }
