"""Minimal dense feed-forward network with hand-written backprop.

Hidden layers use ReLU, the output layer is linear.  Parameters are stored as
``W[i]`` with shape ``(fan_in, fan_out)`` so a batch ``X`` of shape ``(n, D)``
maps as ``X @ W + b``.
"""

from __future__ import annotations

import struct
from typing import Callable

import numpy as np

from .core import DomainError, TrainingError

MAGIC = b"BPDN"
VERSION = 1


class DenseNet:
    def __init__(self, sizes, rng: np.random.Generator | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise DomainError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        self.W = []
        self.b = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                self.W.append(np.zeros((fan_in, fan_out)))
            else:
                # He initialization for ReLU stacks
                self.W.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            self.b.append(np.zeros(fan_out))
        self.n_forward = 0

    @property
    def n_layers(self) -> int:
        return len(self.W)

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def forward(self, X, keep: bool = False):
        """Forward pass.  Counts one inference per input row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.sizes[0]:
            raise DomainError(f"expected {self.sizes[0]} features, got {X.shape[1]}")
        self.n_forward += X.shape[0]
        acts = [X]
        h = X
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            h = h @ W + b
            if i < self.n_layers - 1:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    __call__ = forward

    def backward(self, acts, d_out):
        """Parameter gradients given the cached activations and dLoss/dOutput."""
        grads = [None] * (2 * self.n_layers)
        delta = d_out
        for i in reversed(range(self.n_layers)):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.W[i].T) * (acts[i] > 0.0)
        return grads

    def copy(self) -> "DenseNet":
        net = DenseNet(self.sizes)
        net.W = [w.copy() for w in self.W]
        net.b = [b.copy() for b in self.b]
        return net

    # -- serialization ------------------------------------------------------

    def to_bytes(self, extra: bytes = b"") -> bytes:
        """Checkpoint layout (little endian)::

            b"BPDN" | u32 version | u32 L | L x u32 sizes
            | for each layer: W (row-major f64) then b (f64)
            | u32 len(extra) | extra
        """
        parts = [MAGIC, struct.pack("<II", VERSION, len(self.sizes)),
                 struct.pack(f"<{len(self.sizes)}I", *self.sizes)]
        for W, b in zip(self.W, self.b):
            parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        parts.append(struct.pack("<I", len(extra)))
        parts.append(extra)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> tuple["DenseNet", bytes]:
        if blob[:4] != MAGIC:
            raise DomainError("not a DenseNet checkpoint")
        version, L = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise DomainError(f"unsupported checkpoint version {version}")
        off = 12
        sizes = list(struct.unpack_from(f"<{L}I", blob, off))
        off += 4 * L
        net = cls(sizes)
        for i, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
            net.W[i] = np.frombuffer(blob, "<f8", fi * fo, off).reshape(fi, fo).astype(float)
            off += 8 * fi * fo
            net.b[i] = np.frombuffer(blob, "<f8", fo, off).astype(float)
            off += 8 * fo
        (n_extra,) = struct.unpack_from("<I", blob, off)
        off += 4
        return net, blob[off:off + n_extra]


# ---------------------------------------------------------------------------
# Losses: each returns (loss, dLoss/dOutput)
# ---------------------------------------------------------------------------


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def weighted_soft_ce(logits, targets, weights):
    """Sample-weighted cross-entropy against soft targets, averaged over the batch."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    per = -(targets * logp).sum(axis=1)
    loss = float((weights * per).sum() / n)
    grad = weights[:, None] * (np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets) / n
    return loss, grad


def mse(pred, target):
    n = pred.shape[0]
    diff = pred - target
    return float((diff ** 2).sum() / n), 2.0 * diff / n


def train_sgd(net: DenseNet, X, loss_fn: Callable, epochs: int, lr: float, batch: int,
              rng: np.random.Generator, aux=(), max_grad_norm: float | None = None) -> list[float]:
    """Plain mini-batch SGD.  ``aux`` holds per-row arrays passed to ``loss_fn``.

    ``max_grad_norm`` rescales any step whose global gradient norm exceeds it.
    Returns the mean training loss of each epoch.
    """
    n = X.shape[0]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            out, acts = net.forward(X[idx], keep=True)
            net.n_forward -= len(idx)  # training passes are not inference
            loss, d_out = loss_fn(out, *(a[idx] for a in aux))
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            grads = net.backward(acts, d_out)
            step = lr
            if max_grad_norm is not None:
                norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
                if norm > max_grad_norm:
                    step = lr * max_grad_norm / norm
            for p, g in zip(net.params(), grads):
                p -= step * g
            total += loss * len(idx)
        history.append(total / n)
    return history
