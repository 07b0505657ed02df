"""Closed-loop target-matching task at 30 Hz: online decode loop, the
hold-duration metric, and counterbalanced cross-over experiments.

The decode at tick k uses MAV frames through tick k-1: the feature
schedule places frame k's final sample at the first sample of tick k+1,
so one tick of sensor latency is inherent. Batch, trial, and wire paths
all share this loop, which keeps them bit-identical for equal seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kalman import KalmanParams, SmootherStream
from .nnet.models import Decoder
from .sigproc import MavStream, N_ELECTRODES
from .synthem import N_DOF, EmgStream, ParticipantModel, SleevePlacement
from . import stats

TICK_RATE_HZ = 30
TRIAL_TICKS = 210  # 7.0 s
FULL_SCALE_RANGE = 2.0  # each DOF spans [-1, 1]

REACTION_DELAY_TICKS = 5  # ~150 ms
PURSUIT_RATE = 0.15  # first-order approach per tick
INTENT_NOISE = 0.05


@dataclass
class TargetSpec:
    selected_dofs: tuple
    target: np.ndarray  # [6]; unselected components are 0
    window_fraction: float = 0.10

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.target.shape != (N_DOF,):
            raise ValueError(f"target must have {N_DOF} components")
        self.selected_dofs = tuple(int(d) for d in self.selected_dofs)
        for d in range(N_DOF):
            if d in self.selected_dofs:
                if not 0.3 <= abs(self.target[d]) <= 0.9:
                    raise ValueError(f"selected DOF {d} magnitude must be in [0.3, 0.9]")
            elif self.target[d] != 0.0:
                raise ValueError(f"unselected DOF {d} must rest at 0")

    @property
    def half_width(self) -> float:
        return self.window_fraction * FULL_SCALE_RANGE


@dataclass
class TrialResult:
    hold_duration_s: float
    in_window: np.ndarray      # [210] bool
    decoded: np.ndarray        # [210, 6]
    intended: np.ndarray       # [210, 6]
    condition: str = ""
    seed: int = 0
    raw_decoded: np.ndarray | None = None  # pre-smoother network output
    partial: bool = False


def sample_target(rng: np.random.Generator, n_selected: int = 1) -> TargetSpec:
    dofs = tuple(sorted(rng.choice(N_DOF, size=n_selected, replace=False).tolist()))
    target = np.zeros(N_DOF)
    for d in dofs:
        target[d] = rng.uniform(0.3, 0.9) * rng.choice([-1.0, 1.0])
    return TargetSpec(dofs, target)


def in_window_flags(trajectory: np.ndarray, spec: TargetSpec) -> np.ndarray:
    """Tick is in-window iff every DOF (unselected ones included) sits within
    the +/-10%-of-range band around its target component."""
    trajectory = np.asarray(trajectory)
    if trajectory.ndim != 2 or trajectory.shape[1] != N_DOF:
        raise ValueError(f"trajectory must be [n_ticks, {N_DOF}], got {trajectory.shape}")
    return np.all(np.abs(trajectory - spec.target) <= spec.half_width, axis=1)


def longest_run(flags: np.ndarray) -> int:
    best = current = 0
    for flag in flags:
        current = current + 1 if flag else 0
        best = max(best, current)
    return best


def hold_duration(trajectory: np.ndarray, spec: TargetSpec) -> float:
    trajectory = np.asarray(trajectory)
    if trajectory.shape != (TRIAL_TICKS, N_DOF):
        raise ValueError(f"expected a full [{TRIAL_TICKS}, {N_DOF}] trial, got {trajectory.shape}")
    return longest_run(in_window_flags(trajectory, spec)) / TICK_RATE_HZ


class OracleDecoder:
    """Debug decoder: returns the intended state directly."""


class OnlineDecodeLoop:
    """One trial's stateful pipeline: intent -> EMG tick -> MAV -> image ->
    network (-> smoother) -> decoded state."""

    def __init__(
        self,
        decoder: Decoder | OracleDecoder,
        participant: ParticipantModel,
        placement: SleevePlacement,
        seed: int,
        kalman: KalmanParams | None = None,
    ):
        self.decoder = decoder
        self.emg = EmgStream(participant, placement, seed)
        self.mav = MavStream(N_ELECTRODES)
        self.smoother = SmootherStream(kalman) if kalman is not None else None
        self._features: list[np.ndarray] = []
        self.last_raw = np.zeros(N_DOF)

    def step(self, intent: np.ndarray) -> np.ndarray:
        if isinstance(self.decoder, OracleDecoder):
            self.last_raw = np.asarray(intent, dtype=np.float64)
            return self.last_raw.copy()
        samples = self.emg.push_tick(intent)
        for frame in self.mav.push(samples):
            self._features.append(frame.values.astype(np.float32))
        if not self._features:
            raw = np.zeros(N_DOF)
        else:
            image = np.zeros((N_ELECTRODES, 32), dtype=np.float32)
            recent = self._features[-32:]
            image[:, 32 - len(recent) :] = np.stack(recent, axis=1)
            raw = self.decoder.forward_batch(image)[0].astype(np.float64)
        self.last_raw = raw
        if self.smoother is not None:
            return self.smoother.push(raw)
        return raw


class PursuitController:
    """Synthetic participant intent: first-order pursuit of the target.

    With delay_ticks >= 1 the controller corrects against the DECODED state
    it saw delay_ticks ago (the on-screen hand, like the human task), which
    cancels decoder bias the way a person with visual feedback does. With
    delay_ticks == 0 it pursues via a perfect self-model, the pure geometric
    approach the oracle closed form describes. Gaussian tremor rides on top.
    """

    def __init__(
        self,
        spec: TargetSpec,
        rng: np.random.Generator,
        delay_ticks: int = REACTION_DELAY_TICKS,
        rate: float = PURSUIT_RATE,
        noise: float = INTENT_NOISE,
    ):
        self.spec = spec
        self.rng = rng
        self.delay = int(delay_ticks)
        self.rate = rate
        self.noise = noise
        self.current = np.zeros(N_DOF)

    def step(self, t: int, decoded_history: np.ndarray) -> np.ndarray:
        if self.delay == 0:
            reference = self.current
        elif t >= self.delay:
            reference = decoded_history[t - self.delay]
        else:
            reference = None  # target not yet perceived: stay at rest
        if reference is not None:
            self.current = self.current + self.rate * (self.spec.target - reference)
        value = self.current
        if self.noise > 0:
            value = value + self.rng.normal(0.0, self.noise, N_DOF)
        self.current = np.clip(self.current, -1.0, 1.0)
        return np.clip(value, -1.0, 1.0)


def pursuit_settle_tick(spec: TargetSpec, delay_ticks: int, rate: float) -> int:
    """First tick at which noise-free pursuit enters the window on every DOF
    (closed form of the geometric approach)."""
    worst = 0
    for d in spec.selected_dofs:
        mag = abs(spec.target[d])
        if mag <= spec.half_width:
            continue
        # |target| * (1 - rate)^(t - delay + 1) <= half_width
        steps = int(np.ceil(np.log(spec.half_width / mag) / np.log(1.0 - rate)))
        worst = max(worst, delay_ticks + steps - 1)
    return worst


def trial_seeds(seed: int) -> tuple[np.random.SeedSequence, int]:
    """(intent seed sequence, EMG stream seed) for a trial seed; shared with
    the live loop server so wire trials replay batch trials bit-exactly."""
    intent_seed, emg_seed = np.random.SeedSequence([int(seed), 0x7A5B]).spawn(2)
    return intent_seed, int(emg_seed.generate_state(1)[0])


def run_trial(
    decoder: Decoder | OracleDecoder,
    participant: ParticipantModel,
    placement: SleevePlacement,
    spec: TargetSpec,
    seed: int = 0,
    intent_source: str = "synthetic",
    intents: np.ndarray | None = None,
    kalman: KalmanParams | None = None,
    intent_noise: float = INTENT_NOISE,
    reaction_delay_ticks: int = REACTION_DELAY_TICKS,
    condition: str = "",
) -> TrialResult:
    """210-tick closed-loop trial; a pure function of its seeds."""
    intent_seed, emg_seed = trial_seeds(seed)
    controller = None
    if intent_source == "synthetic":
        rng = np.random.default_rng(intent_seed)
        controller = PursuitController(
            spec, rng, delay_ticks=reaction_delay_ticks, noise=intent_noise
        )
    elif intent_source == "external":
        if intents is None:
            raise ValueError("external intent mode needs an intent array")
        intents = np.asarray(intents, dtype=np.float64)
        if intents.shape != (TRIAL_TICKS, N_DOF):
            raise ValueError(f"external intents must be [{TRIAL_TICKS}, {N_DOF}]")
    else:
        raise ValueError(f"unknown intent source {intent_source!r}")

    loop = OnlineDecodeLoop(decoder, participant, placement, seed=emg_seed, kalman=kalman)
    decoded = np.zeros((TRIAL_TICKS, N_DOF))
    realized = np.zeros((TRIAL_TICKS, N_DOF))
    raw = np.zeros((TRIAL_TICKS, N_DOF)) if kalman is not None else None
    for t in range(TRIAL_TICKS):
        realized[t] = controller.step(t, decoded) if controller is not None else intents[t]
        decoded[t] = loop.step(realized[t])
        if raw is not None:
            raw[t] = loop.last_raw
    flags = in_window_flags(decoded, spec)
    return TrialResult(
        hold_duration_s=longest_run(flags) / TICK_RATE_HZ,
        in_window=flags,
        decoded=decoded,
        intended=realized,
        condition=condition,
        seed=int(seed),
        raw_decoded=raw,
    )


@dataclass
class ExperimentPlan:
    conditions: list
    blocks: int
    seed: int = 0
    n_selected_dofs: int = 1

    def __post_init__(self):
        if len(self.conditions) < 2:
            raise ValueError("a cross-over plan needs at least two conditions")
        if len(set(self.conditions)) != len(self.conditions):
            raise ValueError("condition names must be unique")
        if self.blocks < 1:
            raise ValueError("need at least one block")


def plan_orders(plan: ExperimentPlan) -> list[list[int]]:
    """Counterbalanced pseudorandom block orders: the k rotations of the
    condition list, tiled to the block count, in seeded shuffled order."""
    k = len(plan.conditions)
    rotations = [[(i + r) % k for i in range(k)] for r in range(k)]
    orders = []
    rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 0xB10C]))
    while len(orders) < plan.blocks:
        batch = [rotations[i] for i in rng.permutation(k)]
        orders.extend(batch)
    return orders[: plan.blocks]


def run_experiment(plan: ExperimentPlan, trial_runner) -> dict:
    """Run every block; trial_runner(condition, block_idx, slot_idx, seed)
    must return a TrialResult. Pairing is per block."""
    orders = plan_orders(plan)
    samples = {name: [] for name in plan.conditions}
    rows = []
    for block_idx, order in enumerate(orders):
        for slot_idx, cond_idx in enumerate(order):
            name = plan.conditions[cond_idx]
            seed = int(
                np.random.SeedSequence([plan.seed, block_idx, slot_idx, 0x731A]).generate_state(1)[
                    0
                ]
            )
            result = trial_runner(name, block_idx, slot_idx, seed)
            samples[name].append(result.hold_duration_s)
            rows.append(
                {
                    "condition": name,
                    "block": block_idx,
                    "slot": slot_idx,
                    "seed": seed,
                    "hold_duration_s": result.hold_duration_s,
                }
            )
    summary = {name: stats.mean_sem(values) for name, values in samples.items()}
    pairwise = []
    names = plan.conditions
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            test = stats.paired_t_test(samples[names[i]], samples[names[j]])
            test.update(a=names[i], b=names[j])
            pairwise.append(test)
    return {
        "conditions": list(names),
        "blocks": plan.blocks,
        "seed": plan.seed,
        "samples": samples,
        "summary": summary,
        "pairwise": pairwise,
        "trials": rows,
    }
