"""Multimodal beam prior: classifier, logit standardization, temperature scaling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DomainError, TemperatureConfig, make_rng, zscore_rows
from .nn import DenseNet, softmax, train_sgd, weighted_soft_ce

DEFAULT_HIDDEN = (64, 64)
_STATS_TAG = b"LSTA"


@dataclass(frozen=True)
class LogitStats:
    """Global scalar mean/std of train-split logits."""

    mu_train: float
    sigma_train: float
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.sigma_train > 0:
            raise DomainError("sigma_train must be positive")

    def to_bytes(self) -> bytes:
        return _STATS_TAG + struct.pack("<3d", self.mu_train, self.sigma_train, self.epsilon)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LogitStats":
        if blob[:4] != _STATS_TAG or len(blob) != 28:
            raise DomainError("checkpoint carries no logit statistics")
        return cls(*struct.unpack("<3d", blob[4:]))


@dataclass(frozen=True)
class CalibratedPrior:
    pmf: np.ndarray
    entropy: float
    s_hat: float
    T_eff: float


@dataclass
class PriorModel:
    net: DenseNet
    stats: LogitStats

    def logits(self, X) -> np.ndarray:
        return self.net.forward(X)

    def save(self, path) -> None:
        Path(path).write_bytes(self.net.to_bytes(self.stats.to_bytes()))

    @classmethod
    def load(cls, path) -> "PriorModel":
        net, extra = DenseNet.from_bytes(Path(path).read_bytes())
        return cls(net, LogitStats.from_bytes(extra))


def soft_targets(rewards, label_temp: float = 1.0) -> np.ndarray:
    return softmax(zscore_rows(rewards) / label_temp, axis=1)


def class_weights(labels, n_classes: int) -> np.ndarray:
    """Per-sample weights inversely proportional to label frequency (mean 1)."""
    labels = np.asarray(labels) - 1
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    present = counts > 0
    w_class = np.zeros(n_classes)
    w_class[present] = len(labels) / (present.sum() * counts[present])
    return w_class[labels]


def train_prior(train, epochs: int = 40, lr: float = 0.05, batch: int = 64,
                label_temp: float = 1.0, seed: int = 0,
                hidden=DEFAULT_HIDDEN, epsilon: float = 1e-8,
                history: list | None = None,
                max_grad_norm: float | None = 10.0) -> PriorModel:
    """Fit the prior classifier on a training split.

    Loss is class-weighted cross-entropy against soft targets
    ``softmax(zscore(rewards) / label_temp)``.  Per-epoch losses are appended to
    ``history`` when given.
    """
    if len(train) == 0:
        raise DomainError("empty training split")
    X = train.standardized()
    targets = soft_targets(train.rewards, label_temp)
    weights = class_weights(train.oracle, train.B)
    net = DenseNet([X.shape[1], *hidden, train.B], make_rng(seed, 101))
    losses = train_sgd(net, X, weighted_soft_ce, epochs, lr, batch, make_rng(seed, 102),
                       aux=(targets, weights), max_grad_norm=max_grad_norm)
    if history is not None:
        history.extend(losses)
    z = net.forward(X)
    net.n_forward = 0
    sd = float(z.std())
    stats = LogitStats(float(z.mean()), sd if sd > 0 else 1.0, epsilon)
    return PriorModel(net, stats)


def standardize_logits(z, stats: LogitStats) -> np.ndarray:
    return (np.asarray(z, dtype=float) - stats.mu_train) / (stats.sigma_train + stats.epsilon)


def sharpness(z_std) -> np.ndarray | float:
    """Peak mass of the unit-temperature softmax (row-wise for 2-D input)."""
    p = softmax(z_std, axis=-1)
    out = p.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def effective_temperature(s_hat, u_norm, cfg: TemperatureConfig):
    """Sharpness- and uncertainty-modulated temperature, clipped to [T_min, T_max]."""
    s_hat = np.asarray(s_hat, dtype=float)
    u_norm = np.asarray(u_norm, dtype=float)
    if np.any(s_hat <= 0):
        raise DomainError("s_hat must be positive")
    raw = cfg.T0 * (s_hat / cfg.s_min) ** (-cfg.alpha_temp) * (1.0 + cfg.gamma * u_norm)
    out = np.clip(raw, cfg.T_min, cfg.T_max)
    return float(out) if out.ndim == 0 else out


def entropy(pmf) -> float | np.ndarray:
    """Shannon entropy in nats (row-wise for 2-D input), with 0 log 0 = 0."""
    p = np.asarray(pmf, dtype=float)
    if np.any(p < 0):
        raise DomainError("negative probability mass")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise DomainError("pmf does not sum to 1")
    terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = terms.sum(axis=-1)
    return float(h) if np.ndim(h) == 0 else h


def calibrate(z_std, T_eff: float) -> CalibratedPrior:
    z_std = np.asarray(z_std, dtype=float)
    if not np.all(np.isfinite(z_std)):
        raise DomainError("non-finite logits")
    if not T_eff > 0:
        raise DomainError("T_eff must be positive")
    pmf = softmax(z_std / T_eff)
    return CalibratedPrior(pmf, entropy(pmf), sharpness(z_std), float(T_eff))


def calibrate_rows(z_std, u_norm, cfg: TemperatureConfig):
    """Batched prior calibration: returns ``(pmf, H, s_hat, T_eff)`` arrays."""
    z_std = np.asarray(z_std, dtype=float)
    if not np.all(np.isfinite(z_std)):
        raise DomainError("non-finite logits")
    s_hat = sharpness(z_std)
    T_eff = effective_temperature(s_hat, u_norm, cfg)
    pmf = softmax(z_std / np.asarray(T_eff)[:, None], axis=1)
    return pmf, entropy(pmf), s_hat, T_eff
