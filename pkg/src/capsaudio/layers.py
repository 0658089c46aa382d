"""Non-capsule layers: dense, batch norm, bidirectional LSTM, dropout,
additive attention pooling."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import ConfigError, DegenerateBatch, InputTooShort, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    def __init__(self, rng, n_in: int, n_out: int):
        self.W = Tensor(glorot(rng, (n_in, n_out), n_in, n_out), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def params(self):
        return {"W": self.W, "b": self.b}

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.W) + self.b


class BatchNorm:
    """Normalizes each feature dim over (batch, time) jointly."""

    def __init__(self, n_dims: int):
        self.gamma = Tensor(np.ones(n_dims), requires_grad=True)
        self.beta = Tensor(np.zeros(n_dims), requires_grad=True)
        self.running_mean = np.zeros(n_dims)
        self.running_var = np.ones(n_dims)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.data.ndim != 3:
            raise ShapeError(f"batch norm expects [batch, frames, dims], got {x.shape}")
        if x.data.shape[2] != self.gamma.data.shape[0]:
            raise ShapeError(f"batch norm dims {self.gamma.shape} vs input {x.shape}")
        if training:
            if x.data.shape[0] * x.data.shape[1] < 2:
                raise DegenerateBatch("batch norm needs batch*frames >= 2 in training")
            mu = ad.tmean(x, axis=(0, 1))
            centered = x - mu
            var = ad.tmean(ad.square(centered), axis=(0, 1))
            xhat = centered / ad.sqrt(var + BN_EPS)
            self.running_mean = (BN_MOMENTUM * self.running_mean
                                 + (1.0 - BN_MOMENTUM) * mu.data)
            self.running_var = (BN_MOMENTUM * self.running_var
                                + (1.0 - BN_MOMENTUM) * var.data)
        else:
            inv = 1.0 / np.sqrt(self.running_var + BN_EPS)
            xhat = (x - self.running_mean) * inv
        return xhat * self.gamma + self.beta


def lstm_seq(x: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor) -> Tensor:
    """One LSTM direction over a time-major [T, B, I] sequence (fused op)."""
    h, c, gates = kernels.lstm_forward(
        np.ascontiguousarray(x.data), Wx.data, Wh.data, b.data)

    def backward(g):
        return kernels.lstm_backward(
            np.ascontiguousarray(g), np.ascontiguousarray(x.data),
            Wx.data, Wh.data, h, c, gates)

    return ad.apply_op("lstm", (x, Wx, Wh, b), h, backward)


class LSTMDirection:
    def __init__(self, rng, n_in: int, hidden: int):
        self.Wx = Tensor(glorot(rng, (n_in, 4 * hidden), n_in, 4 * hidden),
                         requires_grad=True)
        self.Wh = Tensor(glorot(rng, (hidden, 4 * hidden), hidden, 4 * hidden),
                         requires_grad=True)
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.b = Tensor(b, requires_grad=True)
        self.hidden = hidden

    def params(self):
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}


class BiLSTM:
    """Bidirectional LSTM; outputs per-timestep [B, T, 2*hidden]."""

    def __init__(self, rng, n_in: int, hidden: int):
        self.fwd = LSTMDirection(rng, n_in, hidden)
        self.bwd = LSTMDirection(rng, n_in, hidden)
        self.hidden = hidden

    def params(self):
        out = {}
        for tag, d in (("fwd", self.fwd), ("bwd", self.bwd)):
            for k, v in d.params().items():
                out[f"{tag}.{k}"] = v
        return out

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.ndim != 3:
            raise ShapeError(f"bilstm expects [batch, frames, dims], got {x.shape}")
        if x.data.shape[1] == 0:
            raise InputTooShort("bilstm got a zero-length sequence")
        xm = ad.transpose(x, (1, 0, 2))
        hf = lstm_seq(xm, self.fwd.Wx, self.fwd.Wh, self.fwd.b)
        hb = ad.flip(lstm_seq(ad.flip(xm, 0), self.bwd.Wx, self.bwd.Wh, self.bwd.b), 0)
        return ad.transpose(ad.concat([hf, hb], axis=-1), (1, 0, 2))


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability rate, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("training-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


class AttentionPool:
    """Additive attention over time: softmax(v . tanh(W h_t)) weights."""

    def __init__(self, rng, n_in: int, n_att: int):
        self.W = Tensor(glorot(rng, (n_in, n_att), n_in, n_att), requires_grad=True)
        self.v = Tensor(glorot(rng, (n_att, 1), n_att, 1), requires_grad=True)

    def params(self):
        return {"W": self.W, "v": self.v}

    def __call__(self, h: Tensor) -> Tensor:
        if h.data.ndim != 3:
            raise ShapeError(f"attention expects [batch, frames, dims], got {h.shape}")
        scores = ad.matmul(ad.tanh(ad.matmul(h, self.W)), self.v)  # [B, T, 1]
        alpha = ad.softmax(scores, axis=1)
        return ad.tsum(h * alpha, axis=1)


def mean_pool(h: Tensor) -> Tensor:
    return ad.tmean(h, axis=1)
