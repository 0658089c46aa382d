"""Capsule layer with dynamic routing-by-agreement, margin loss and the
masked decoder regularizer.

One primary capsule per input timestep; class capsules of dimension
caps_dim. Routing logits start at zero on every forward pass and gradients
flow through the fully unrolled routing iterations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .layers import Dense, glorot


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """v = (|s|^2 / (1 + |s|^2)) * s / |s|; maps 0 to 0, |v| < 1."""
    n = ad.l2norm(s, axis=axis, keepdims=True)
    return s * (n / (ad.square(n) + 1.0))


class CapsuleLayer:
    """Transforms primary capsules and routes them to class capsules."""

    def __init__(self, rng, n_primary: int, in_dim: int, n_classes: int,
                 caps_dim: int, routing_iters: int):
        if caps_dim < 2:
            raise ShapeError(f"caps_dim must be >= 2, got {caps_dim}")
        if routing_iters < 1:
            raise ShapeError(f"routing_iters must be >= 1, got {routing_iters}")
        self.W = Tensor(glorot(rng, (n_primary, n_classes, caps_dim, in_dim),
                               in_dim, caps_dim), requires_grad=True)
        self.n_primary = n_primary
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.caps_dim = caps_dim
        self.routing_iters = routing_iters

    def params(self):
        return {"W": self.W}

    def __call__(self, u: Tensor, collect_couplings: list | None = None) -> Tensor:
        """Route primaries [B, P, in_dim] to class capsules [B, C, caps_dim].

        When collect_couplings is a list, the coupling-coefficient array of
        every iteration is appended to it (values only, for inspection).
        """
        if u.data.ndim != 3 or u.data.shape[1:] != (self.n_primary, self.in_dim):
            raise ShapeError(f"expected [batch, {self.n_primary}, {self.in_dim}], "
                             f"got {u.shape}")
        B, P, C, D = u.data.shape[0], self.n_primary, self.n_classes, self.caps_dim

        # Predictions u_hat[b, i, j] = W[i, j] @ u[b, i], batched over i.
        Wm = ad.transpose(ad.reshape(self.W, (P, C * D, self.in_dim)), (0, 2, 1))
        uhat = ad.matmul(ad.transpose(u, (1, 0, 2)), Wm)          # [P, B, C*D]
        uhat = ad.reshape(ad.transpose(uhat, (1, 0, 2)), (B, P, C, D))

        b = Tensor(np.zeros((B, P, C)))  # routing logits, reset per pass
        v = None
        for it in range(self.routing_iters):
            c = ad.softmax(b, axis=2)
            if collect_couplings is not None:
                collect_couplings.append(c.data.copy())
            s = ad.tsum(uhat * ad.reshape(c, (B, P, C, 1)), axis=1)
            v = squash(s, axis=-1)
            if it < self.routing_iters - 1:
                agreement = ad.tsum(uhat * ad.reshape(v, (B, 1, C, D)), axis=-1)
                b = b + agreement
        return v


def length_layer(caps: Tensor) -> Tensor:
    """Per-class activity-vector length, [B, C, D] -> [B, C]."""
    return ad.l2norm(caps, axis=-1, keepdims=False)


@dataclass(frozen=True)
class MarginLossParams:
    m_plus: float = 0.9
    m_minus: float = 0.1
    lam: float = 0.5  # 0.5 single-label, 1.0 multi-label


def margin_loss(lengths: Tensor, targets: np.ndarray,
                p: MarginLossParams = MarginLossParams()) -> Tensor:
    """Hinge-squared class loss, summed over classes and averaged over batch."""
    if lengths.data.shape != targets.shape:
        raise ShapeError(f"lengths {lengths.shape} vs targets {targets.shape}")
    t = Tensor(targets)
    present = t * ad.square(ad.relu(p.m_plus - lengths))
    absent = (1.0 - t) * ad.square(ad.relu(lengths - p.m_minus)) * p.lam
    return ad.tmean(ad.tsum(present + absent, axis=1))


def mae(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mae operands {a.shape} vs {b.shape}")
    return ad.tmean(ad.absolute(a - b))


class Decoder:
    """Reconstructs the scaled feature matrix from masked class capsules."""

    def __init__(self, rng, n_classes: int, caps_dim: int, out_dim: int,
                 hidden: tuple[int, int] = (512, 1024)):
        self.fc1 = Dense(rng, n_classes * caps_dim, hidden[0])
        self.fc2 = Dense(rng, hidden[0], hidden[1])
        self.out = Dense(rng, hidden[1], out_dim)
        self.n_classes = n_classes
        self.caps_dim = caps_dim
        self.out_dim = out_dim

    def params(self):
        out = {}
        for tag, layer in (("fc1", self.fc1), ("fc2", self.fc2), ("out", self.out)):
            for k, v in layer.params().items():
                out[f"{tag}.{k}"] = v
        return out

    def __call__(self, caps: Tensor, targets: np.ndarray) -> Tensor:
        B = caps.data.shape[0]
        if caps.data.shape != (B, self.n_classes, self.caps_dim):
            raise ShapeError(f"decoder got capsules {caps.shape}")
        mask = Tensor(targets.reshape(B, self.n_classes, 1))
        flat = ad.reshape(caps * mask, (B, self.n_classes * self.caps_dim))
        h = ad.relu(self.fc1(flat))
        h = ad.relu(self.fc2(h))
        return ad.sigmoid(self.out(h))


def decode_reconstruct(caps: Tensor, targets: np.ndarray, decoder: Decoder,
                       scaled_target: np.ndarray) -> tuple[Tensor, Tensor]:
    """Masked reconstruction and its mean-absolute-error loss."""
    recon = decoder(caps, targets)
    if scaled_target.shape != recon.data.shape:
        raise ShapeError(f"reconstruction {recon.shape} vs target {scaled_target.shape}")
    return recon, mae(recon, Tensor(scaled_target))


def predict(lengths: np.ndarray, mode: str, threshold: float = 0.5) -> np.ndarray:
    """Multi-hot predictions [B, C]: argmax for single, thresholding for multi.

    Argmax ties resolve to the lowest class index.
    """
    if mode == "single":
        out = np.zeros_like(lengths)
        out[np.arange(lengths.shape[0]), lengths.argmax(axis=1)] = 1.0
        return out
    if mode == "multi":
        return (lengths > threshold).astype(np.float64)
    raise ShapeError(f"unknown predict mode {mode!r}")
