"""Linear Kalman filter: least-squares system identification, the causal
predict/update step, and stream smoothing for decoded kinematics.

Used two ways: as the output smoother on network predictions (m = n = 6,
states are training labels, observations the network's predictions on the
training set, so the smoother learns the network's error statistics), and
as a feature-space decoder baseline (m = channel count).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RIDGE = 1e-8


class FitError(ValueError):
    pass


@dataclass
class KalmanParams:
    A: np.ndarray  # state transition [n, n]
    W: np.ndarray  # process noise covariance [n, n]
    H: np.ndarray  # observation matrix [m, n]
    Q: np.ndarray  # observation noise covariance [m, m]

    def __post_init__(self):
        n = self.A.shape[0]
        m = self.H.shape[0]
        if self.A.shape != (n, n) or self.W.shape != (n, n):
            raise ValueError("A and W must be square and same size")
        if self.H.shape != (m, n) or self.Q.shape != (m, m):
            raise ValueError(f"H/Q dimensions inconsistent: {self.H.shape}, {self.Q.shape}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]


@dataclass
class KalmanState:
    x: np.ndarray  # [n]
    P: np.ndarray  # [n, n]


def _residual_cov(residuals: np.ndarray) -> np.ndarray:
    t = residuals.shape[0]
    cov = residuals.T @ residuals / max(t - 1, 1)
    cov = 0.5 * (cov + cov.T)
    return cov + RIDGE * np.eye(cov.shape[0])


def fit(states: np.ndarray, observations: np.ndarray) -> KalmanParams:
    """Least-squares identification of x_{t+1} = A x_t + w, z_t = H x_t + q."""
    states = np.asarray(states, dtype=np.float64)
    observations = np.asarray(observations, dtype=np.float64)
    if states.ndim != 2 or observations.ndim != 2:
        raise FitError("states and observations must be [T, dim] matrices")
    t, n = states.shape
    if observations.shape[0] != t:
        raise FitError(f"length mismatch: {t} states vs {observations.shape[0]} observations")
    m = observations.shape[1]
    if t <= n + m:
        raise FitError(f"need more than n + m = {n + m} samples, got {t}")
    if np.linalg.matrix_rank(states) < n:
        raise FitError("state trajectory is rank-deficient; cannot identify dynamics")

    x0, x1 = states[:-1], states[1:]
    a_t, *_ = np.linalg.lstsq(x0, x1, rcond=None)
    A = a_t.T
    W = _residual_cov(x1 - x0 @ a_t)

    h_t, *_ = np.linalg.lstsq(states, observations, rcond=None)
    H = h_t.T
    Q = _residual_cov(observations - states @ h_t)
    return KalmanParams(A, W, H, Q)


def step(params: KalmanParams, state: KalmanState, z: np.ndarray) -> KalmanState:
    """One predict/update cycle; innovation solve instead of explicit inverse."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (params.m,):
        raise ValueError(f"observation must have shape ({params.m},), got {z.shape}")
    A, W, H, Q = params.A, params.W, params.H, params.Q
    x_pred = A @ state.x
    p_pred = A @ state.P @ A.T + W
    innovation_cov = H @ p_pred @ H.T + Q
    try:
        gain = np.linalg.solve(innovation_cov, H @ p_pred).T
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"innovation covariance not invertible: {exc}") from exc
    x_new = x_pred + gain @ (z - H @ x_pred)
    p_new = (np.eye(params.n) - gain @ H) @ p_pred
    p_new = 0.5 * (p_new + p_new.T)  # re-symmetrize against drift
    return KalmanState(x_new, p_new)


def filter_stream(params: KalmanParams, zs: np.ndarray, state: KalmanState) -> np.ndarray:
    out = np.empty((zs.shape[0], params.n))
    for i, z in enumerate(zs):
        state = step(params, state, z)
        out[i] = state.x
    return out


def initial_state(params: KalmanParams, z0: np.ndarray | None = None) -> KalmanState:
    """x from the first observation when dimensions allow, else zero; P = W."""
    if z0 is not None and params.m == params.n:
        x = np.asarray(z0, dtype=np.float64).copy()
    else:
        x = np.zeros(params.n)
    return KalmanState(x, params.W.copy())


class SmootherStream:
    """Streaming form of smooth_stream: clamped passthrough on the first
    observation, then causal predict/update per tick."""

    def __init__(self, params: KalmanParams):
        if params.m != params.n:
            raise ValueError("smoothing requires square observation dimensions (m == n)")
        self.params = params
        self.state: KalmanState | None = None

    def push(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.state is None:
            self.state = initial_state(self.params, z)
            return np.clip(z, -1.0, 1.0)
        self.state = step(self.params, self.state, z)
        return np.clip(self.state.x, -1.0, 1.0)


def smooth_stream(params: KalmanParams, zs: np.ndarray) -> np.ndarray:
    """Causal smoothing of a 6-DOF decode stream; output clamped to [-1, 1]."""
    zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
    if zs.shape[1] != params.n:
        raise ValueError(f"stream width {zs.shape[1]} != state dim {params.n}")
    stream = SmootherStream(params)
    return np.stack([stream.push(z) for z in zs])


def decode_stream(params: KalmanParams, zs: np.ndarray) -> np.ndarray:
    """Feature-observation decode (m = channels); kinematic output clamped."""
    zs = np.atleast_2d(np.asarray(zs, dtype=np.float64))
    out = filter_stream(params, zs, initial_state(params))
    return np.clip(out, -1.0, 1.0)


def mean_squared_first_difference(stream: np.ndarray) -> float:
    """Jerkiness proxy: mean over ticks and DOFs of squared tick-to-tick change."""
    stream = np.atleast_2d(stream)
    if stream.shape[0] < 2:
        raise ValueError("need at least two ticks")
    return float(np.mean(np.diff(stream, axis=0) ** 2))


def fit_output_smoother(labels: np.ndarray, predictions: np.ndarray) -> KalmanParams:
    """Smoother over the decoder's own training-set predictions."""
    return fit(labels, predictions)
