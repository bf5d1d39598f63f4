"""Q-ensemble: M reward regressors whose disagreement is the uncertainty proxy."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigError, DomainError, make_rng
from .measurement import hybrid_targets
from .nn import DenseNet, mse, softmax, train_sgd

MAGIC = b"BPQE"
VERSION = 1


@dataclass(frozen=True)
class EnsembleEstimate:
    mu: np.ndarray
    tau: np.ndarray
    sigma_hat: np.ndarray


@dataclass
class QEnsemble:
    members: list
    seeds: tuple = ()
    alpha_hybrid: float | None = None
    bootstrap: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.members) < 2:
            raise ConfigError("an ensemble needs M >= 2 members")
        shapes = {tuple(m.sizes) for m in self.members}
        if len(shapes) != 1:
            raise DomainError("ensemble members differ in layer sizes")

    @property
    def M(self) -> int:
        return len(self.members)

    @property
    def n_forward(self) -> int:
        return sum(m.n_forward for m in self.members)

    def predict_all(self, X) -> np.ndarray:
        """Stacked member outputs, shape ``(M, n, B)``; one pass per member."""
        return np.stack([m.forward(X) for m in self.members])

    def save(self, path) -> None:
        """Container: b"BPQE" | u32 version | u32 json_len | json | M x (u64 len | member)."""
        meta = {"M": self.M, "seeds": list(self.seeds), "alpha_hybrid": self.alpha_hybrid,
                "bootstrap": self.bootstrap, **self.meta}
        blob = json.dumps(meta, sort_keys=True).encode()
        parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
        for m in self.members:
            b = m.to_bytes()
            parts += [struct.pack("<Q", len(b)), b]
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path) -> "QEnsemble":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise DomainError("not an ensemble checkpoint")
        version, n = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise DomainError(f"unsupported ensemble version {version}")
        meta = json.loads(raw[12:12 + n])
        off = 12 + n
        members = []
        for _ in range(meta["M"]):
            (size,) = struct.unpack_from("<Q", raw, off)
            off += 8
            net, _ = DenseNet.from_bytes(raw[off:off + size])
            members.append(net)
            off += size
        extra = {k: v for k, v in meta.items() if k not in ("M", "seeds", "alpha_hybrid", "bootstrap")}
        return cls(members, tuple(meta["seeds"]), meta["alpha_hybrid"], meta["bootstrap"], extra)


def train_ensemble(train, prior, M: int = 5, epochs: int = 30, lr: float = 0.02,
                   batch: int = 64, seed: int = 0, alpha_hybrid: float = 0.7,
                   hidden=(64, 64), bootstrap: bool = True,
                   history: list | None = None,
                   max_grad_norm: float | None = 10.0) -> QEnsemble:
    """Train M regressors on hybrid targets.

    ``prior`` supplies the sensing-derived beam prior (unit-temperature
    softmax of its raw logits).  Each member sees its own bootstrap resample
    and init seed; ``bootstrap=False`` with identical seeds gives identical
    members.  ``history`` collects one loss curve per member.
    """
    if M < 2:
        raise ConfigError("an ensemble needs M >= 2 members")
    X = train.standardized()
    pi_sense = softmax(prior.net.forward(X), axis=1)
    prior.net.n_forward -= X.shape[0]
    Y = hybrid_targets(train.rewards, pi_sense, alpha_hybrid)
    members, seeds = [], []
    for m in range(M):
        mseed = seed * 1000 + m if bootstrap else seed
        rng = make_rng(mseed, 201)
        idx = rng.integers(0, len(X), size=len(X)) if bootstrap else np.arange(len(X))
        net = DenseNet([X.shape[1], *hidden, train.B], make_rng(mseed, 202))
        curve = train_sgd(net, X[idx], mse, epochs, lr, batch, make_rng(mseed, 203), aux=(Y[idx],),
                          max_grad_norm=max_grad_norm)
        if history is not None:
            history.append(curve)
        members.append(net)
        seeds.append(mseed)
    return QEnsemble(members, tuple(seeds), float(alpha_hybrid), bootstrap)


def ensemble_stats(outputs, epsilon: float = 1e-8):
    """Mean, population std and per-row normalized uncertainty from ``(M, ..., B)`` outputs."""
    outputs = np.asarray(outputs, dtype=float)
    # shift by the first member so exact agreement gives exact zeros
    dev = outputs - outputs[0]
    dmean = dev.mean(axis=0)
    mu = outputs[0] + dmean
    tau = np.sqrt(((dev - dmean) ** 2).mean(axis=0))
    sigma_hat = tau / (tau.max(axis=-1, keepdims=True) + epsilon)
    return mu, tau, sigma_hat


def estimate(ens: QEnsemble, x, epsilon: float = 1e-8) -> EnsembleEstimate:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError("estimate takes a single feature vector")
    if x.shape[0] != ens.members[0].sizes[0]:
        raise DomainError("feature dimension mismatch")
    mu, tau, sig = ensemble_stats(ens.predict_all(x[None, :])[:, 0, :], epsilon)
    return EnsembleEstimate(mu, tau, sig)


def estimate_rows(ens: QEnsemble, X, epsilon: float = 1e-8):
    """Batched :func:`estimate`; returns ``(mu, tau, sigma_hat)`` of shape ``(n, B)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != ens.members[0].sizes[0]:
        raise DomainError("feature dimension mismatch")
    return ensemble_stats(ens.predict_all(X), epsilon)
