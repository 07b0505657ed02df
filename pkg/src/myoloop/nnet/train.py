"""SGD-with-momentum training loop, strict first-increase early stopping,
and the finite-difference gradient checker."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .layers import Sequential, zero_grads
from .models import INPUT_SHAPE, Decoder, instantiate


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 64
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass
class TrainingHistory:
    train_rmse: list = field(default_factory=list)
    val_rmse: list = field(default_factory=list)
    stopped_epoch: int = 0
    wall_time_s: float = 0.0

    def summary(self) -> dict:
        # wall time intentionally excluded: model files must be bit-stable
        return {
            "train_rmse": [float(v) for v in self.train_rmse],
            "val_rmse": [float(v) for v in self.val_rmse],
            "stopped_epoch": self.stopped_epoch,
        }


class SgdMomentum:
    def __init__(self, net: Sequential, learning_rate: float, momentum: float):
        self.pairs = net.params_and_grads()
        self.lr = learning_rate
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p, _ in self.pairs]

    def step(self):
        for v, (p, g) in zip(self.velocity, self.pairs):
            v *= self.momentum
            v -= self.lr * g
            p += v


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def _eval_rmse(decoder: Decoder, x: np.ndarray, y: np.ndarray, batch: int = 256) -> float:
    sq_sum, count = 0.0, 0
    for lo in range(0, x.shape[0], batch):
        pred = decoder.forward_batch(x[lo : lo + batch], train=False)
        sq_sum += float(np.sum((pred - y[lo : lo + batch]) ** 2))
        count += pred.size
    return float(np.sqrt(sq_sum / count))


def normalization_stats(train_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-electrode mean/std over all training image cells."""
    mean = train_x.mean(axis=(0, 2)).astype(np.float32)
    std = train_x.std(axis=(0, 2)).astype(np.float32)
    return mean, np.maximum(std, np.float32(1e-6))


def train(
    spec: list[dict],
    train_data: tuple[np.ndarray, np.ndarray],
    val_data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig | None = None,
    arch: str = "custom",
) -> tuple[Decoder, TrainingHistory]:
    """Train until validation RMSE rises, then return the prior epoch's weights.

    Normalization statistics come from the training images only. Shuffling,
    dropout, and initialization all derive from cfg.seed.
    """
    cfg = cfg or TrainConfig()
    train_x, train_y = train_data
    val_x, val_y = val_data
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")

    mean, std = normalization_stats(train_x)
    net = instantiate(spec, cfg.seed)
    decoder = Decoder(spec, net, mean, std, cfg.seed, arch=arch)
    optimizer = SgdMomentum(net, cfg.learning_rate, cfg.momentum)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7248]))

    history = TrainingHistory()
    started = time.perf_counter()
    snapshot = None
    state = net.state_arrays()
    n = train_x.shape[0]

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        sq_sum, count = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            pred = decoder.forward_batch(xb, train=True, rng=rng)
            err = pred - yb
            sq_sum += float(np.sum(err**2))
            count += err.size
            zero_grads(net)
            net.backward((2.0 / err.size) * err.astype(pred.dtype))
            optimizer.step()
        history.train_rmse.append(float(np.sqrt(sq_sum / count)))
        val = _eval_rmse(decoder, val_x, val_y)

        if history.val_rmse and val > history.val_rmse[-1]:
            history.val_rmse.append(val)  # the rejected epoch stays on record
            for current, saved in zip(state, snapshot):
                current[...] = saved
            history.stopped_epoch = epoch - 1
            break
        history.val_rmse.append(val)
        history.stopped_epoch = epoch
        snapshot = [a.copy() for a in state]

    history.wall_time_s = time.perf_counter() - started
    decoder.history = history.summary()
    return decoder, history


def grad_check(spec: list[dict], seed: int = 0, eps: float = 1e-4, n_samples: int = 4) -> float:
    """Max relative error between backprop and central finite differences.

    Runs in float64 with batch-mode batch norm; dropout layers are excluded
    by construction of the specs this is called with.
    """
    net = instantiate(spec, seed, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xFD1F]))
    x = rng.standard_normal((n_samples, *INPUT_SHAPE))
    y = rng.standard_normal((n_samples, 6))

    def loss():
        pred = net.forward(x, True)
        return float(np.mean((pred - y) ** 2))

    pred = net.forward(x, True)
    zero_grads(net)
    net.backward((2.0 / pred.size) * (pred - y))
    analytic = [g.copy() for _, g in net.params_and_grads()]

    worst = 0.0
    for (param, _), ga in zip(net.params_and_grads(), analytic):
        flat = param.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss()
            flat[i] = orig - eps
            lo = loss()
            flat[i] = orig
            gn = (hi - lo) / (2 * eps)
            denom = max(abs(ga_flat[i]) + abs(gn), 1e-5)
            worst = max(worst, abs(ga_flat[i] - gn) / denom)
    return worst
