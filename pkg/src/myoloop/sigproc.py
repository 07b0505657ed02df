"""Deterministic EMG feature extraction: channel montages, streaming MAV, images, SNR.

Everything in this module is a pure function of its inputs (the streaming
class owns only a rolling sample buffer). No randomness anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SAMPLE_RATE_HZ = 1000
TICK_RATE_HZ = 30
MAV_WINDOW_SAMPLES = 300  # 300 ms at 1 kHz
N_ELECTRODES = 32
IMAGE_TICKS = 32


class ChannelMode(Enum):
    SINGLE_ENDED = "single_ended"
    DIFFERENTIAL = "differential"
    COMBINED = "combined"

    @property
    def n_channels(self) -> int:
        return {
            ChannelMode.SINGLE_ENDED: 32,
            ChannelMode.DIFFERENTIAL: 496,
            ChannelMode.COMBINED: 528,
        }[self]


def differential_pairs() -> tuple[np.ndarray, np.ndarray]:
    """All unordered electrode pairs (i, j), i < j, in lexicographic order."""
    return np.triu_indices(N_ELECTRODES, k=1)


@dataclass
class RawEmgBlock:
    """Multi-channel raw EMG, samples[n_samples, n_channels] at 1 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {self.samples.shape}")
        if self.sample_rate != SAMPLE_RATE_HZ:
            raise ValueError(f"sample_rate must be {SAMPLE_RATE_HZ}, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain non-finite values")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]


@dataclass
class FeatureFrame:
    """Per-tick MAV vector emitted at 30 Hz."""

    tick_index: int
    values: np.ndarray
    tick_rate: int = TICK_RATE_HZ


@dataclass
class SnrReport:
    snr: float
    mean_movement_mav: float
    mean_rest_mav: float


def derive_channels(block: RawEmgBlock, mode: ChannelMode) -> RawEmgBlock:
    """Derive the requested channel montage from a 32-electrode block.

    Differential channel (i, j) is the sample-wise difference sample_i - sample_j,
    formed on raw samples (differences of MAVs would not be equivalent).
    In COMBINED, single-ended channels occupy indices 0-31 followed by the pairs.
    """
    if block.n_channels != N_ELECTRODES:
        raise ValueError(f"expected {N_ELECTRODES}-channel block, got {block.n_channels}")
    if mode is ChannelMode.SINGLE_ENDED:
        return block
    i, j = differential_pairs()
    diff = block.samples[:, i] - block.samples[:, j]
    if mode is ChannelMode.DIFFERENTIAL:
        return RawEmgBlock(diff)
    return RawEmgBlock(np.hstack([block.samples, diff]))


def mav(window: np.ndarray) -> float:
    """Mean absolute value of a sample window."""
    window = np.asarray(window)
    if window.size == 0:
        raise ValueError("mav of an empty window is undefined")
    return float(np.mean(np.abs(window)))


def tick_sample_index(k: int) -> int:
    """Sample index at which tick k is emitted: floor((k+1)*1000/30).

    30 Hz does not divide 1 kHz; this integer schedule has no drift.
    """
    return ((k + 1) * SAMPLE_RATE_HZ) // TICK_RATE_HZ


class MavStream:
    """Streaming 300-ms trailing MAV at 30 Hz, chunk-split invariant.

    The stream behaves as if prefixed with 299 zero samples, so every
    window has exactly 300 rows and frames before sample 299 are
    zero-padded. Feeding the same samples in any chunking yields
    bit-identical frames.
    """

    def __init__(self, n_channels: int, window: int = MAV_WINDOW_SAMPLES):
        self.n_channels = n_channels
        self.window = window
        self._carry = np.zeros((window - 1, n_channels), dtype=np.float64)
        self._n_seen = 0
        self._next_tick = 0

    def push(self, samples: np.ndarray) -> list[FeatureFrame]:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != self.n_channels:
            raise ValueError(f"expected [n, {self.n_channels}] samples, got {samples.shape}")
        data = np.concatenate([self._carry, samples], axis=0)
        total = self._n_seen + samples.shape[0]
        frames = []
        while tick_sample_index(self._next_tick) <= total - 1:
            s_k = tick_sample_index(self._next_tick)
            offset = s_k - self._n_seen  # data row of window end, minus (window-1)
            win = data[offset : offset + self.window]
            frames.append(FeatureFrame(self._next_tick, np.abs(win).mean(axis=0)))
            self._next_tick += 1
        self._carry = data[-(self.window - 1) :]
        self._n_seen = total
        return frames


def mav_stream(block: RawEmgBlock) -> list[FeatureFrame]:
    """All MAV frames of a block; tick k emitted only if its sample exists."""
    return MavStream(block.n_channels).push(block.samples)


def frames_to_matrix(frames: list[FeatureFrame]) -> np.ndarray:
    """Stack frames into [n_ticks, n_channels]."""
    if not frames:
        raise ValueError("no frames")
    return np.stack([f.values for f in frames])


def build_image(history: list[FeatureFrame], n_ticks: int = IMAGE_TICKS) -> np.ndarray:
    """Channel-by-tick image from the trailing frames, newest in the last column.

    Missing (oldest) columns are zero-filled when fewer than n_ticks frames exist.
    """
    if not history:
        raise ValueError("need at least one frame")
    n_ch = history[0].values.shape[0]
    if n_ch != N_ELECTRODES:
        raise ValueError(f"image input requires {N_ELECTRODES} channels, got {n_ch}")
    image = np.zeros((n_ch, n_ticks), dtype=np.float64)
    recent = history[-n_ticks:]
    image[:, n_ticks - len(recent) :] = np.stack([f.values for f in recent], axis=1)
    return image


def image_from_matrix(features: np.ndarray, tick: int, n_ticks: int = IMAGE_TICKS) -> np.ndarray:
    """Image ending at row `tick` of a [n_ticks_total, 32] feature matrix."""
    lo = max(0, tick - n_ticks + 1)
    window = features[lo : tick + 1]
    image = np.zeros((features.shape[1], n_ticks), dtype=features.dtype)
    image[:, n_ticks - window.shape[0] :] = window.T
    return image


REST_MEAN_FLOOR = 1e-12


def snr(frames: list[FeatureFrame], movement: np.ndarray) -> SnrReport:
    """Mean MAV over movement-labeled (tick, channel) cells over the same for rest.

    `movement` is a per-tick boolean mask; both label classes must be present.
    """
    matrix = frames_to_matrix(frames)
    movement = np.asarray(movement, dtype=bool)
    if movement.shape != (matrix.shape[0],):
        raise ValueError(f"labels shape {movement.shape} != n_ticks ({matrix.shape[0]},)")
    if not movement.any() or movement.all():
        raise ValueError("need at least one MOVEMENT and one REST tick")
    mean_movement = float(matrix[movement].mean())
    mean_rest = float(matrix[~movement].mean())
    if mean_rest <= REST_MEAN_FLOOR:
        raise ValueError(f"rest MAV mean {mean_rest} is below the {REST_MEAN_FLOOR} floor")
    return SnrReport(mean_movement / mean_rest, mean_movement, mean_rest)
