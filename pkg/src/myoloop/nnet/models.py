"""Decoder architectures: declarative layer specs, builders, and inference.

A network spec is a JSON-serializable list of layer dicts, so model files
can reconstruct the exact architecture. Shapes are chain-checked at
instantiation and exactly one linear_output(6) head is required.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..synthem import N_DOF
from .layers import (
    BatchNorm,
    Conv3x3,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    ReLU,
    ResidualBlock,
    Sequential,
)

INPUT_SHAPE = (32, 32, 1)  # NHWC conv view of the 32-channel x 32-tick image


def shallow_spec(hidden: int = 128, dropout: float = 0.5) -> list[dict]:
    """10 counted layers: flatten, 3x(dense+relu), dropout after the first
    two ReLUs, linear output."""
    n_in = int(np.prod(INPUT_SHAPE))
    return [
        {"kind": "flatten"},
        {"kind": "dense", "n_in": n_in, "n_out": hidden},
        {"kind": "relu"},
        {"kind": "dropout", "rate": dropout},
        {"kind": "dense", "n_in": hidden, "n_out": hidden},
        {"kind": "relu"},
        {"kind": "dropout", "rate": dropout},
        {"kind": "dense", "n_in": hidden, "n_out": hidden},
        {"kind": "relu"},
        {"kind": "linear_output", "n_in": hidden, "n_out": N_DOF},
    ]


def _residual_spec(c_in: int, c_out: int, stride: int) -> dict:
    return {
        "kind": "residual",
        "projection": stride != 1 or c_in != c_out,
        "stride": stride,
        "inner": [
            {"kind": "conv3x3", "c_in": c_in, "c_out": c_out, "stride": stride},
            {"kind": "batch_norm", "n": c_out},
            {"kind": "relu"},
            {"kind": "conv3x3", "c_in": c_out, "c_out": c_out, "stride": 1},
            {"kind": "batch_norm", "n": c_out},
        ],
    }


def deep_spec(widths: tuple[int, int, int] = (8, 16, 32), blocks_per_stage: int = 3) -> list[dict]:
    """Stem conv + 3 stages of residual blocks (stride-2 entry into stages 2
    and 3 with projection skips), global average pool, linear output."""
    if list(widths) != sorted(widths):
        raise ValueError(f"widths must be ascending, got {widths}")
    spec = [
        {"kind": "conv3x3", "c_in": 1, "c_out": widths[0], "stride": 1},
        {"kind": "batch_norm", "n": widths[0]},
        {"kind": "relu"},
    ]
    c_in = widths[0]
    for stage, width in enumerate(widths):
        for block in range(blocks_per_stage):
            stride = 2 if stage > 0 and block == 0 else 1
            spec.append(_residual_spec(c_in, width, stride))
            c_in = width
    spec.append({"kind": "global_avg_pool"})
    spec.append({"kind": "linear_output", "n_in": c_in, "n_out": N_DOF})
    return spec


def _instantiate_one(entry: dict, rng, dtype):
    kind = entry["kind"]
    if kind == "flatten":
        return Flatten()
    if kind == "dense" or kind == "linear_output":
        return Dense(entry["n_in"], entry["n_out"], rng, dtype=dtype)
    if kind == "relu":
        return ReLU()
    if kind == "dropout":
        return Dropout(entry["rate"])
    if kind == "conv3x3":
        return Conv3x3(entry["c_in"], entry["c_out"], rng, stride=entry["stride"], dtype=dtype)
    if kind == "batch_norm":
        return BatchNorm(entry["n"], dtype=dtype)
    if kind == "global_avg_pool":
        return GlobalAvgPool()
    if kind == "residual":
        inner = Sequential([_instantiate_one(e, rng, dtype) for e in entry["inner"]])
        projection = None
        if entry["projection"]:
            first = entry["inner"][0]
            projection = Conv3x3(
                first["c_in"], first["c_out"], rng, stride=entry["stride"], dtype=dtype, kernel=1
            )
        return ResidualBlock(inner, projection)
    raise ValueError(f"unknown layer kind {kind!r}")


def _check_shapes(spec: list[dict]):
    shape = INPUT_SHAPE  # (H, W, C) or (D,) once flattened
    outputs = 0
    for entry in spec:
        kind = entry["kind"]
        if kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif kind in ("dense", "linear_output"):
            if len(shape) != 1 or shape[0] != entry["n_in"]:
                raise ValueError(f"{kind} expects {entry['n_in']} inputs, chain has {shape}")
            shape = (entry["n_out"],)
            if kind == "linear_output":
                outputs += 1
                if entry["n_out"] != N_DOF:
                    raise ValueError(f"linear_output must emit {N_DOF} values")
        elif kind in ("relu", "dropout"):
            pass
        elif kind == "conv3x3":
            if len(shape) != 3 or shape[2] != entry["c_in"]:
                raise ValueError(f"conv3x3 expects {entry['c_in']} channels, chain has {shape}")
            s = entry["stride"]
            shape = (-(-shape[0] // s), -(-shape[1] // s), entry["c_out"])
        elif kind == "batch_norm":
            if shape[-1] != entry["n"]:
                raise ValueError(f"batch_norm over {entry['n']} features, chain has {shape}")
        elif kind == "global_avg_pool":
            if len(shape) != 3:
                raise ValueError(f"global_avg_pool needs a conv map, chain has {shape}")
            shape = (shape[2],)
        elif kind == "residual":
            inner_in = entry["inner"][0]["c_in"]
            if len(shape) != 3 or shape[2] != inner_in:
                raise ValueError(f"residual expects {inner_in} channels, chain has {shape}")
            s = entry["stride"]
            shape = (-(-shape[0] // s), -(-shape[1] // s), entry["inner"][0]["c_out"])
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    if outputs != 1:
        raise ValueError(f"spec must contain exactly one linear_output, found {outputs}")
    if len(shape) != 1 or shape[0] != N_DOF:
        raise ValueError(f"network must end at {N_DOF} outputs, got {shape}")


def instantiate(spec: list[dict], seed: int, dtype=np.float32) -> Sequential:
    _check_shapes(spec)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1217]))
    return Sequential([_instantiate_one(e, rng, dtype) for e in spec])


def count_sublayers(spec: list[dict]) -> int:
    """Named sublayers: input and output markers, plus every conv / BN /
    ReLU / dropout / dense / pool / flatten / residual-add / post-add ReLU."""

    def walk(entries):
        total = 0
        for entry in entries:
            if entry["kind"] == "residual":
                total += walk(entry["inner"])
                total += 1 if entry["projection"] else 0
                total += 2  # the add and the ReLU that follows it
            else:
                total += 1
        return total

    return walk(spec) + 2


def parameter_count(net: Sequential) -> int:
    return sum(p.size for p, _ in net.params_and_grads())


@dataclass
class Decoder:
    """Trained network plus the input normalization it was fitted with."""

    spec: list[dict]
    net: Sequential
    norm_mean: np.ndarray  # [32] per-electrode MAV mean of the training data
    norm_std: np.ndarray   # [32]
    seed: int
    arch: str = "custom"
    history: dict = field(default_factory=dict)
    kalman: "object | None" = None  # KalmanParams when saved "with KF"

    def normalize(self, images: np.ndarray) -> np.ndarray:
        return (images - self.norm_mean[:, None]) / self.norm_std[:, None]

    def forward_batch(self, images: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        if images.ndim == 2:
            images = images[None]
        if images.shape[1:] != (32, 32):
            raise ValueError(f"expected [n, 32, 32] images, got {images.shape}")
        x = self.normalize(images.astype(self.norm_mean.dtype))[:, :, :, None]
        out = self.net.forward(x, train, rng)
        if not train:
            out = np.clip(out, -1.0, 1.0)
        return out


def forward(decoder: Decoder, image: np.ndarray, mode: str = "eval", rng=None) -> np.ndarray:
    """Single-image decode; EVAL disables dropout, uses running BN stats,
    and clamps to [-1, 1]."""
    if mode not in ("eval", "train"):
        raise ValueError(f"mode must be 'eval' or 'train', got {mode!r}")
    return decoder.forward_batch(np.asarray(image), train=(mode == "train"), rng=rng)[0]


def identity_normalization(dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros(32, dtype=dtype), np.ones(32, dtype=dtype)


def build_shallow(seed: int = 0, hidden: int = 128) -> Decoder:
    spec = shallow_spec(hidden=hidden)
    mean, std = identity_normalization()
    return Decoder(spec, instantiate(spec, seed), mean, std, int(seed), arch="shallow")


def build_deep(seed: int = 0, widths: tuple[int, int, int] = (8, 16, 32)) -> Decoder:
    spec = deep_spec(widths=widths)
    mean, std = identity_normalization()
    return Decoder(spec, instantiate(spec, seed), mean, std, int(seed), arch="deep")
