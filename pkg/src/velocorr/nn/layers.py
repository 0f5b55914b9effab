"""Neural-network layers with hand-written forward/backward passes.

Layers operate on numpy arrays and keep their parameters in a ``params``
dict of named arrays; ``backward`` consumes the cache produced by the
matching ``forward`` call and returns (input gradient, parameter gradients).
Sequence layers take (batch, time, features); the conv layer takes
(batch, channels, time, features).  Everything is dtype-polymorphic: float64
for gradient checking, float32 for training.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Input shape incompatible with a layer's configuration."""

    def __init__(self, layer: str, expected, actual):
        super().__init__(f"{layer}: expected input shape {expected}, got {actual}")
        self.layer = layer
        self.expected = expected
        self.actual = actual


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


class Linear:
    """Affine map on the last axis: y = x @ w + b."""

    def __init__(self, d_in, d_out, rng, dtype=np.float32, name="linear"):
        self.name = name
        self.d_in = d_in
        self.d_out = d_out
        self.params = {
            "w": _uniform_init(rng, (d_in, d_out), d_in, dtype),
            "b": np.zeros(d_out, dtype=dtype),
        }

    def forward(self, x):
        if x.shape[-1] != self.d_in:
            raise ShapeError(self.name, f"(..., {self.d_in})", x.shape)
        y = x @ self.params["w"] + self.params["b"]
        return y, x

    def backward(self, dy, cache):
        x = cache
        flat_x = x.reshape(-1, self.d_in)
        flat_dy = dy.reshape(-1, self.d_out)
        grads = {"w": flat_x.T @ flat_dy, "b": flat_dy.sum(axis=0)}
        dx = dy @ self.params["w"].T
        return dx, grads


class Sigmoid:
    """Elementwise logistic activation."""

    params: dict = {}
    name = "sigmoid"

    def forward(self, x):
        y = sigmoid(x)
        return y, y

    def backward(self, dy, cache):
        y = cache
        return dy * y * (1.0 - y), {}


class ReLU:
    params: dict = {}
    name = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, {}


class Conv2d:
    """3x3-style 2D convolution, stride 1, zero 'same' padding.

    Input (B, C_in, H, W) -> output (B, C_out, H, W).
    """

    def __init__(self, c_in, c_out, kernel, rng, dtype=np.float32, name="conv2d"):
        self.name = name
        self.c_in = c_in
        self.c_out = c_out
        self.kh, self.kw = kernel
        fan_in = c_in * self.kh * self.kw
        self.params = {
            "k": _uniform_init(rng, (c_out, c_in, self.kh, self.kw), fan_in, dtype),
            "b": np.zeros(c_out, dtype=dtype),
        }

    def _pad(self):
        return self.kh // 2, self.kw // 2

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(self.name, f"(B, {self.c_in}, H, W)", x.shape)
        ph, pw = self._pad()
        padded = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        patches = np.lib.stride_tricks.sliding_window_view(
            padded, (self.kh, self.kw), axis=(2, 3)
        )
        # patches: (B, C_in, H, W, kh, kw)
        y = np.einsum("bchwij,ocij->bohw", patches, self.params["k"], optimize=True)
        y += self.params["b"][None, :, None, None]
        return y.astype(x.dtype, copy=False), (x, patches)

    def backward(self, dy, cache):
        x, patches = cache
        ph, pw = self._pad()
        grads = {
            "k": np.einsum("bohw,bchwij->ocij", dy, patches, optimize=True),
            "b": dy.sum(axis=(0, 2, 3)),
        }
        dx_padded = np.zeros(
            (x.shape[0], x.shape[1], x.shape[2] + 2 * ph, x.shape[3] + 2 * pw),
            dtype=dy.dtype,
        )
        h, w = x.shape[2], x.shape[3]
        for i in range(self.kh):
            for j in range(self.kw):
                dx_padded[:, :, i:i + h, j:j + w] += np.einsum(
                    "bohw,oc->bchw", dy, self.params["k"][:, :, i, j], optimize=True
                )
        dx = dx_padded[:, :, ph:ph + h, pw:pw + w]
        return dx, grads


class FreqAvgPool:
    """Average pooling by an integer factor along the last (frequency) axis.

    A trailing remainder that does not fill a full pool window is dropped.
    """

    params: dict = {}

    def __init__(self, factor=2, name="freqpool"):
        self.factor = factor
        self.name = name

    def forward(self, x):
        k = self.factor
        w = x.shape[-1] // k * k
        trimmed = x[..., :w]
        y = trimmed.reshape(*trimmed.shape[:-1], w // k, k).mean(axis=-1)
        return y, x.shape

    def backward(self, dy, cache):
        in_shape = cache
        k = self.factor
        dx = np.zeros(in_shape, dtype=dy.dtype)
        w = in_shape[-1] // k * k
        spread = np.repeat(dy / k, k, axis=-1)
        dx[..., :w] = spread
        return dx, {}


class LSTM:
    """Single-direction LSTM over (B, T, D) sequences.

    Gates are packed [input, forget, cell, output] along the last axis of the
    combined projections.  The forget-gate bias starts at 1.0, everything
    else at zero bias with uniform +-1/sqrt(fan_in) weights.
    """

    def __init__(self, d_in, d_hidden, rng, dtype=np.float32, name="lstm"):
        self.name = name
        self.d_in = d_in
        self.d_hidden = d_hidden
        bias = np.zeros(4 * d_hidden, dtype=dtype)
        bias[d_hidden:2 * d_hidden] = 1.0
        self.params = {
            "w_x": _uniform_init(rng, (d_in, 4 * d_hidden), d_in, dtype),
            "w_h": _uniform_init(rng, (d_hidden, 4 * d_hidden), d_hidden, dtype),
            "b": bias,
        }

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.d_in:
            raise ShapeError(self.name, f"(B, T, {self.d_in})", x.shape)
        B, T, _ = x.shape
        H = self.d_hidden
        w_h = self.params["w_h"]
        pre_x = x.reshape(B * T, self.d_in) @ self.params["w_x"]
        pre_x = pre_x.reshape(B, T, 4 * H) + self.params["b"]

        gates = np.empty((B, T, 4 * H), dtype=x.dtype)   # activated i,f,g,o
        cells = np.empty((B, T, H), dtype=x.dtype)
        tanc = np.empty((B, T, H), dtype=x.dtype)
        hidden = np.empty((B, T, H), dtype=x.dtype)
        h = np.zeros((B, H), dtype=x.dtype)
        c = np.zeros((B, H), dtype=x.dtype)
        for t in range(T):
            z = pre_x[:, t] + h @ w_h
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            gates[:, t, :H] = i
            gates[:, t, H:2 * H] = f
            gates[:, t, 2 * H:3 * H] = g
            gates[:, t, 3 * H:] = o
            cells[:, t] = c
            tanc[:, t] = tc
            hidden[:, t] = h
        return hidden, (x, gates, cells, tanc, hidden)

    def backward(self, dh_out, cache):
        x, gates, cells, tanc, hidden = cache
        B, T, _ = x.shape
        H = self.d_hidden
        w_h = self.params["w_h"]

        dz_all = np.empty((B, T, 4 * H), dtype=dh_out.dtype)
        dw_h = np.zeros_like(w_h)
        dc_next = np.zeros((B, H), dtype=dh_out.dtype)
        dh_next = np.zeros((B, H), dtype=dh_out.dtype)
        for t in range(T - 1, -1, -1):
            i = gates[:, t, :H]
            f = gates[:, t, H:2 * H]
            g = gates[:, t, 2 * H:3 * H]
            o = gates[:, t, 3 * H:]
            tc = tanc[:, t]
            dh = dh_out[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            c_prev = cells[:, t - 1] if t > 0 else 0.0
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ w_h.T
            if t > 0:
                dw_h += hidden[:, t - 1].T @ dz
        flat_x = x.reshape(B * T, self.d_in)
        flat_dz = dz_all.reshape(B * T, 4 * H)
        grads = {
            "w_x": flat_x.T @ flat_dz,
            "w_h": dw_h,
            "b": flat_dz.sum(axis=0),
        }
        dx = (flat_dz @ self.params["w_x"].T).reshape(x.shape)
        return dx, grads


class BiLSTM:
    """Bidirectional LSTM: forward and time-reversed passes concatenated.

    (B, T, D) -> (B, T, 2*H); columns [0, H) are the forward direction.
    """

    def __init__(self, d_in, d_hidden, rng, dtype=np.float32, name="bilstm"):
        self.name = name
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.fw = LSTM(d_in, d_hidden, rng, dtype, name=f"{name}.fw")
        self.bw = LSTM(d_in, d_hidden, rng, dtype, name=f"{name}.bw")
        self.params = {}
        for prefix, sub in (("fw", self.fw), ("bw", self.bw)):
            for key, value in sub.params.items():
                self.params[f"{prefix}.{key}"] = value

    def forward(self, x):
        y_fw, cache_fw = self.fw.forward(x)
        y_bw_rev, cache_bw = self.bw.forward(x[:, ::-1])
        y = np.concatenate([y_fw, y_bw_rev[:, ::-1]], axis=-1)
        return y, (cache_fw, cache_bw)

    def backward(self, dy, cache):
        cache_fw, cache_bw = cache
        H = self.d_hidden
        dx_fw, grads_fw = self.fw.backward(np.ascontiguousarray(dy[:, :, :H]), cache_fw)
        dx_bw_rev, grads_bw = self.bw.backward(
            np.ascontiguousarray(dy[:, ::-1, H:]), cache_bw
        )
        dx = dx_fw + dx_bw_rev[:, ::-1]
        grads = {f"fw.{k}": v for k, v in grads_fw.items()}
        grads.update({f"bw.{k}": v for k, v in grads_bw.items()})
        return dx, grads
