"""Mimicry recording protocol, .emgs persistence, accumulation, and splits.

A session prepends a rest baseline (the rest-MAV reference any SNR
measurement needs), then runs the six preprogrammed movements. Features
and labels are tick-aligned at 30 Hz; the trailing partial tick is
dropped. Datasets are immutable values after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import __version__
from .fileformat import FormatError, check_magic_version, read_f32, read_header, write_file
from .sigproc import (
    ChannelMode,
    IMAGE_TICKS,
    RawEmgBlock,
    derive_channels,
    image_from_matrix,
    mav_stream,
)
from .synthem import (
    N_DOF,
    ParticipantModel,
    SleevePlacement,
    generate_trajectory,
    placement_to_json,
    synthesize_emg,
)

EMGS_MAGIC = "EMGS1"
EMGS_VERSION = 1

# ticks to drop after a movement/rest transition before trusting labels:
# activation latency (3 ticks) + MAV window (9 ticks)
SNR_GUARD_TICKS = 12


@dataclass
class RecordingProtocol:
    """Per-movement speed and hold; scalars broadcast to all six movements."""

    speed_scale: float | tuple = 1.0
    hold_s: float | tuple = 2.0
    repetitions: int = 1
    rest_baseline_s: float = 5.0
    channel_mode: ChannelMode = ChannelMode.SINGLE_ENDED

    def per_movement(self, value) -> list[float]:
        if np.isscalar(value):
            return [float(value)] * N_DOF
        value = list(value)
        if len(value) != N_DOF:
            raise ValueError(f"per-movement values need length {N_DOF}, got {len(value)}")
        return [float(v) for v in value]


@dataclass
class SplitSpec:
    train_fraction: float = 0.97

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be in (0, 1), got {self.train_fraction}")

    def train_ticks(self, n: int) -> int:
        frac = Fraction(self.train_fraction).limit_denominator(1_000_000)
        return (n * frac.numerator) // frac.denominator


@dataclass
class SessionDataset:
    features: np.ndarray  # [n_ticks, n_channels] float32 MAV
    labels: np.ndarray    # [n_ticks, 6] float32 kinematics
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.float32)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"feature/label tick mismatch: {self.features.shape[0]} vs {self.labels.shape[0]}"
            )
        if self.labels.ndim != 2 or self.labels.shape[1] != N_DOF:
            raise ValueError(f"labels must be [n_ticks, {N_DOF}], got {self.labels.shape}")
        if self.features.size and self.features.min() < 0:
            raise ValueError("features must be non-negative MAV values")
        if self.labels.size and np.abs(self.labels).max() > 1.0:
            raise ValueError("labels must lie within [-1, 1]")
        self.metadata.setdefault(
            "segments",
            [{"session_id": self.metadata.get("session_id", "session"), "n_ticks": self.n_ticks}],
        )

    @property
    def n_ticks(self) -> int:
        return self.features.shape[0]

    @property
    def n_channels(self) -> int:
        return self.features.shape[1]

    @property
    def segments(self) -> list[dict]:
        return self.metadata["segments"]


def datasets_equal(a: SessionDataset, b: SessionDataset) -> bool:
    return (
        np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels)
        and a.metadata == b.metadata
    )


def protocol_trajectory(protocol: RecordingProtocol) -> np.ndarray:
    """Intended 30 Hz kinematics: rest baseline, then movements 0-5 repeated."""
    speeds = protocol.per_movement(protocol.speed_scale)
    holds = protocol.per_movement(protocol.hold_s)
    parts = [np.zeros((int(round(protocol.rest_baseline_s * 30)), N_DOF))]
    for movement in range(N_DOF):
        for _ in range(protocol.repetitions):
            parts.append(generate_trajectory(movement, speeds[movement], holds[movement]))
    return np.concatenate(parts)


def record_session(
    participant: ParticipantModel,
    placement: SleevePlacement,
    protocol: RecordingProtocol | None = None,
    seed: int = 0,
    session_id: str = "session",
) -> SessionDataset:
    """Run the mimicry protocol: synthesize EMG, extract MAV, align labels."""
    protocol = protocol or RecordingProtocol()
    if protocol.repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    intended = protocol_trajectory(protocol)
    block = synthesize_emg(participant, placement, intended, seed=seed)
    block = derive_channels(block, protocol.channel_mode)
    frames = mav_stream(block)
    n = len(frames)  # one less than the intent ticks: trailing partial dropped
    features = np.stack([f.values for f in frames]).astype(np.float32)
    labels = intended[:n].astype(np.float32)
    metadata = {
        "session_id": session_id,
        "participant_seed": participant.seed,
        "placement": json.loads(placement_to_json(placement)),
        "seed": int(seed),
        "speed_scale": protocol.per_movement(protocol.speed_scale),
        "hold_s": protocol.per_movement(protocol.hold_s),
        "repetitions": protocol.repetitions,
        "rest_baseline_s": protocol.rest_baseline_s,
        "channel_mode": protocol.channel_mode.value,
        "created_by": f"myoloop {__version__}",
    }
    return SessionDataset(features, labels, metadata)


def save(ds: SessionDataset, path):
    header = {
        "magic": EMGS_MAGIC,
        "version": EMGS_VERSION,
        "n_ticks": ds.n_ticks,
        "n_channels": ds.n_channels,
        "n_dof": N_DOF,
        "metadata": ds.metadata,
    }
    write_file(path, header, [ds.features, ds.labels])


def load(path) -> SessionDataset:
    with open(path, "rb") as f:
        header = read_header(f)
        check_magic_version(header, EMGS_MAGIC, EMGS_VERSION)
        for key in ("n_ticks", "n_channels", "n_dof"):
            if not isinstance(header.get(key), int) or header[key] < 0:
                raise FormatError(f"header field {key} missing or invalid")
        if header["n_dof"] != N_DOF:
            raise FormatError(f"unsupported n_dof {header['n_dof']}")
        n, ch = header["n_ticks"], header["n_channels"]
        features = read_f32(f, n * ch).reshape(n, ch)
        labels = read_f32(f, n * N_DOF).reshape(n, N_DOF)
        if f.read(1):
            raise FormatError("trailing bytes after payload")
    return SessionDataset(features, labels, header.get("metadata", {}))


def accumulate(sessions: list[SessionDataset]) -> SessionDataset:
    """Tick-wise concatenation in the given order; segments metadata preserved."""
    if not sessions:
        raise ValueError("nothing to accumulate")
    channels = {ds.n_channels for ds in sessions}
    if len(channels) != 1:
        raise ValueError(f"channel count mismatch across sessions: {sorted(channels)}")
    segments = [dict(seg) for ds in sessions for seg in ds.segments]
    metadata = {
        "accumulated": True,
        "session_ids": [seg["session_id"] for seg in segments],
        "segments": segments,
    }
    return SessionDataset(
        np.concatenate([ds.features for ds in sessions]),
        np.concatenate([ds.labels for ds in sessions]),
        metadata,
    )


MIN_SPLIT_TICKS = 34


def split(ds: SessionDataset, spec: SplitSpec | None = None) -> tuple[SessionDataset, SessionDataset]:
    """Tail-holdout per constituent session (random splits would leak through
    the 32-tick image window)."""
    spec = spec or SplitSpec()
    if ds.n_ticks < MIN_SPLIT_TICKS:
        raise ValueError(f"need >= {MIN_SPLIT_TICKS} ticks to split, have {ds.n_ticks}")
    train_feat, train_lab, val_feat, val_lab = [], [], [], []
    train_segs, val_segs = [], []
    start = 0
    for seg in ds.segments:
        n = seg["n_ticks"]
        cut = spec.train_ticks(n)
        train_feat.append(ds.features[start : start + cut])
        train_lab.append(ds.labels[start : start + cut])
        val_feat.append(ds.features[start + cut : start + n])
        val_lab.append(ds.labels[start + cut : start + n])
        train_segs.append({"session_id": seg["session_id"], "n_ticks": cut})
        val_segs.append({"session_id": seg["session_id"], "n_ticks": n - cut})
        start += n
    train = SessionDataset(
        np.concatenate(train_feat),
        np.concatenate(train_lab),
        {"split": "train", "segments": train_segs},
    )
    val = SessionDataset(
        np.concatenate(val_feat),
        np.concatenate(val_lab),
        {"split": "validation", "segments": val_segs},
    )
    return train, val


def supervised_arrays(
    ds: SessionDataset,
    spec: SplitSpec | None = None,
    image_ticks: int = IMAGE_TICKS,
    stride: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(train_x, train_y, val_x, val_y) image/label pairs for decoder training.

    Training images whose window would cross a session start are excluded;
    validation images keep their in-session history (causal, and the tail
    ticks never feed any training window). `stride` subsamples training
    ticks (adjacent images share all but one column, so a stride trades
    little information for proportional training cost); validation always
    keeps every tick.
    """
    spec = spec or SplitSpec()
    if ds.n_ticks < MIN_SPLIT_TICKS:
        raise ValueError(f"need >= {MIN_SPLIT_TICKS} ticks, have {ds.n_ticks}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    cuts = [spec.train_ticks(seg["n_ticks"]) for seg in ds.segments]
    n_train = sum(
        len(range(image_ticks - 1, cut, stride)) for cut in cuts
    )
    n_val = sum(seg["n_ticks"] - cut for seg, cut in zip(ds.segments, cuts))
    n_ch = ds.n_channels
    train_x = np.empty((n_train, n_ch, image_ticks), dtype=np.float32)
    train_y = np.empty((n_train, N_DOF), dtype=np.float32)
    val_x = np.empty((n_val, n_ch, image_ticks), dtype=np.float32)
    val_y = np.empty((n_val, N_DOF), dtype=np.float32)
    start, ti, vi = 0, 0, 0
    for seg, cut in zip(ds.segments, cuts):
        n = seg["n_ticks"]
        features = ds.features[start : start + n]
        labels = ds.labels[start : start + n]
        for t in range(image_ticks - 1, cut, stride):
            train_x[ti] = image_from_matrix(features, t, image_ticks)
            train_y[ti] = labels[t]
            ti += 1
        for t in range(cut, n):
            val_x[vi] = image_from_matrix(features, t, image_ticks)
            val_y[vi] = labels[t]
            vi += 1
        start += n
    return train_x, train_y, val_x, val_y


def movement_mask(ds: SessionDataset) -> np.ndarray:
    """Per-tick MOVEMENT flag: any intended DOF away from rest."""
    return np.abs(ds.labels).max(axis=1) > 0


def transition_guard(labels: np.ndarray, guard_ticks: int = SNR_GUARD_TICKS) -> np.ndarray:
    """Mask that drops the settling ticks right after each label transition."""
    keep = np.ones(len(labels), dtype=bool)
    for t in np.nonzero(np.diff(labels.astype(np.int8)) != 0)[0]:
        keep[t + 1 : t + 1 + guard_ticks] = False
    return keep


def session_snr(ds: SessionDataset, guard_ticks: int = SNR_GUARD_TICKS) -> float:
    """Movement-to-rest MAV ratio with transition settling excluded."""
    movement = movement_mask(ds)
    keep = transition_guard(movement, guard_ticks)
    mov = ds.features[movement & keep]
    rest = ds.features[~movement & keep]
    if mov.size == 0 or rest.size == 0:
        raise ValueError("need both movement and rest ticks outside the guard bands")
    return float(mov.mean() / rest.mean())
