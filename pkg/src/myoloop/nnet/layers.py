"""Layer kinds with explicit forward/backward passes on numpy arrays.

Conv inputs are NHWC (channels last, so convolution GEMM outputs and
batch-norm reductions stay contiguous with no transposes). Every layer
caches what its backward pass needs during forward; backward accumulates
parameter gradients and returns the input gradient. dtype is fixed per
instance (float32 for training, float64 for gradient checks).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

_ONES = {}


def _ones_row(m, dtype):
    """Cached [m] ones vector: column sums as BLAS matvec beat ufunc.reduce
    on channel-last arrays."""
    key = (m, np.dtype(dtype).name)
    if key not in _ONES:
        _ONES[key] = np.ones(m, dtype=dtype)
    return _ONES[key]


def _col_sums(x2: np.ndarray) -> np.ndarray:
    return _ones_row(x2.shape[0], x2.dtype) @ x2


class Layer:
    def forward(self, x, train: bool, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def params_and_grads(self):
        return []

    def state_arrays(self):
        """Arrays persisted in a model file, in a fixed order."""
        return [p for p, _ in self.params_and_grads()]


class Dense(Layer):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        std = np.sqrt(2.0 / n_in)
        self.w = (rng.standard_normal((n_in, n_out)) * std).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x, train, rng=None):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        self.dw += self._x.T @ dout
        self.db += dout.sum(axis=0)
        return dout @ self.w.T

    def params_and_grads(self):
        return [(self.w, self.dw), (self.b, self.db)]


class ReLU(Layer):
    def forward(self, x, train, rng=None):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Dropout(Layer):
    """Inverted dropout: activations scaled by 1/(1-rate) at train time."""

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an explicit rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask


class Flatten(Layer):
    def forward(self, x, train, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


def _same_padding(size, stride, kernel=3):
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


class Conv3x3(Layer):
    """3x3 convolution on NHWC maps, same padding, stride 1 or 2."""

    def __init__(self, c_in, c_out, rng, stride=1, dtype=np.float32, kernel=3):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.stride = stride
        self.kernel = kernel
        std = np.sqrt(2.0 / (c_in * kernel * kernel))
        self.w = (rng.standard_normal((c_out, c_in, kernel, kernel)) * std).astype(dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def _w_mat(self):
        # cols flatten as (ki, kj, c): channel-minor keeps the im2col gather
        # copying contiguous runs
        return self.w.transpose(2, 3, 1, 0).reshape(-1, self.w.shape[0])

    def forward(self, x, train, rng=None):
        n, h, w, c = x.shape
        k, s = self.kernel, self.stride
        pt, pb = _same_padding(h, s, k)
        pl, pr = _same_padding(w, s, k)
        x_pad = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        oh, ow = -(-h // s), -(-w // s)
        windows = sliding_window_view(x_pad, (k, k), axis=(1, 2))[:, ::s, ::s]
        # windows: [n, oh, ow, c, ki, kj] -> rows ordered (ki, kj, c)
        cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(
            n * oh * ow, k * k * c
        )
        out = cols @ self._w_mat() + self.b
        self._cache = (cols, x.shape, x_pad.shape, (pt, pl), (oh, ow))
        return out.reshape(n, oh, ow, -1)

    def backward(self, dout):
        cols, x_shape, pad_shape, (pt, pl), (oh, ow) = self._cache
        n, h, w, c = x_shape
        k, s = self.kernel, self.stride
        f = self.w.shape[0]
        dout_mat = dout.reshape(-1, f)
        dw_mat = cols.T @ dout_mat  # [k*k*c, f]
        self.dw += dw_mat.reshape(k, k, c, f).transpose(3, 2, 0, 1)
        self.db += _ones_row(dout_mat.shape[0], dout.dtype) @ dout_mat
        # one GEMM per kernel offset keeps both the product and the add
        # contiguous: far cheaper than a col2im gather on this hardware
        w_kkcf = self._w_mat().reshape(k, k, c, f)
        dx_pad = np.zeros(pad_shape, dtype=dout.dtype)
        for di in range(k):
            for dj in range(k):
                delta = (dout_mat @ w_kkcf[di, dj].T).reshape(n, oh, ow, c)
                dx_pad[:, di : di + (oh - 1) * s + 1 : s, dj : dj + (ow - 1) * s + 1 : s, :] += (
                    delta
                )
        return dx_pad[:, pt : pt + h, pl : pl + w, :]

    def params_and_grads(self):
        return [(self.w, self.dw), (self.b, self.db)]


class BatchNorm(Layer):
    """Per-feature normalization; features live on the LAST axis, so conv
    maps normalize per channel over (N, H, W) with no layout shuffling."""

    def __init__(self, n_features, dtype=np.float32):
        self.gamma = np.ones(n_features, dtype=dtype)
        self.beta = np.zeros(n_features, dtype=dtype)
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)

    def forward(self, x, train, rng=None):
        c = x.shape[-1]
        x2 = x.reshape(-1, c)
        m = x2.shape[0]
        if train:
            mean = _col_sums(x2) / m
            var = np.einsum("mc,mc->c", x2, x2, optimize=True) / m - mean**2
            var = np.maximum(var, 0)
            # in place: snapshots for early stopping hold references to these
            self.running_mean *= 1 - BN_MOMENTUM
            self.running_mean += (BN_MOMENTUM * mean).astype(self.running_mean.dtype)
            self.running_var *= 1 - BN_MOMENTUM
            self.running_var += (BN_MOMENTUM * var).astype(self.running_var.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
        xhat = (x2 - mean.astype(x.dtype)) * inv_std
        self._cache = (xhat, inv_std)
        self.last_xhat = xhat  # exposed for normalization-statistics tests
        return (self.gamma * xhat + self.beta).reshape(x.shape)

    def backward(self, dout):
        xhat, inv_std = self._cache
        d2 = dout.reshape(-1, dout.shape[-1])
        m = d2.shape[0]
        sum_d_xhat = np.einsum("mc,mc->c", d2, xhat, optimize=True)
        sum_d = _col_sums(d2)
        self.dgamma += sum_d_xhat
        self.dbeta += sum_d
        g = self.gamma
        dx2 = (inv_std * g / m) * (m * d2 - sum_d - xhat * sum_d_xhat)
        return dx2.reshape(dout.shape).astype(dout.dtype)

    def params_and_grads(self):
        return [(self.gamma, self.dgamma), (self.beta, self.dbeta)]

    def state_arrays(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]


class GlobalAvgPool(Layer):
    def forward(self, x, train, rng=None):
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout):
        n, h, w, c = self._shape
        return np.broadcast_to(dout[:, None, None, :], self._shape) / (h * w)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def params_and_grads(self):
        return [pg for layer in self.layers for pg in layer.params_and_grads()]

    def state_arrays(self):
        return [a for layer in self.layers for a in layer.state_arrays()]


class ResidualBlock(Layer):
    """inner path + skip (identity or 1x1 projection), ReLU after the add."""

    def __init__(self, inner: Sequential, projection: Conv3x3 | None = None):
        self.inner = inner
        self.projection = projection

    def forward(self, x, train, rng=None):
        h = self.inner.forward(x, train, rng)
        skip = self.projection.forward(x, train, rng) if self.projection else x
        pre = h + skip
        self._mask = pre > 0
        return pre * self._mask

    def backward(self, dout):
        dpre = dout * self._mask
        dx = self.inner.backward(dpre)
        if self.projection:
            dx = dx + self.projection.backward(dpre)
        else:
            dx = dx + dpre
        return dx

    def params_and_grads(self):
        pg = self.inner.params_and_grads()
        if self.projection:
            pg += self.projection.params_and_grads()
        return pg

    def state_arrays(self):
        arrays = self.inner.state_arrays()
        if self.projection:
            arrays += self.projection.state_arrays()
        return arrays


def zero_grads(root: Layer):
    for param, grad in root.params_and_grads():
        grad[...] = 0
