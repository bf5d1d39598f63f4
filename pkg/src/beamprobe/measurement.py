"""SNR proxy, oracle labels, hybrid training targets and the penalized objective."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .core import DomainError, zscore_row, zscore_rows

log = logging.getLogger(__name__)

P_SIGNAL = 99.7
P_NOISE = 20.0
EPS_POWER = 1e-12


@dataclass(frozen=True)
class RewardRow:
    t: int
    snr_db: np.ndarray
    oracle: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.snr_db)):
            raise DomainError("reward row has non-finite entries")
        if self.oracle != oracle_beam(self.snr_db):
            raise DomainError("oracle is not the argmax of the reward row")


@dataclass(frozen=True)
class HybridTarget:
    values: np.ndarray
    alpha_hybrid: float


def _check_levels(p_s, p_n):
    if not (0.0 <= p_n < p_s <= 100.0):
        raise DomainError(f"need 0 <= p_n < p_s <= 100, got p_s={p_s}, p_n={p_n}")


def snr_proxy_db(power_samples, p_s: float = P_SIGNAL, p_n: float = P_NOISE,
                 epsilon: float = EPS_POWER) -> float:
    """Robust SNR in dB from one recording of ``|Z|^2`` samples.

    Ratio of a high and a low percentile of the sample powers.  All-zero
    recordings give 0 dB (with a warning) instead of ``-inf``.
    """
    x = np.asarray(power_samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("empty power recording")
    return float(snr_proxy_rows(x[None, :], p_s, p_n, epsilon)[0])


def snr_proxy_rows(power, p_s: float = P_SIGNAL, p_n: float = P_NOISE,
                   epsilon: float = EPS_POWER) -> np.ndarray:
    """Vectorized :func:`snr_proxy_db` over the last axis of ``power``."""
    _check_levels(p_s, p_n)
    power = np.asarray(power, dtype=float)
    if power.shape[-1] == 0:
        raise DomainError("empty power recording")
    lead = power.shape[:-1]
    flat = np.ascontiguousarray(power.reshape(-1, power.shape[-1]))
    out, degenerate = kernels.snr_proxy_rows(flat, float(p_s), float(p_n), float(epsilon))
    if degenerate.any():
        log.warning("%d all-zero power recording(s); SNR proxy set to 0 dB",
                    int(degenerate.sum()))
    return out.reshape(lead)


def oracle_beam(row) -> int:
    """1-based argmax of a reward row, lowest index on ties."""
    row = np.asarray(row, dtype=float)
    if row.ndim != 1 or row.size == 0:
        raise DomainError("oracle_beam needs a nonempty vector")
    if not np.all(np.isfinite(row)):
        raise DomainError("oracle_beam: non-finite entries")
    return int(np.argmax(row)) + 1


def oracle_beams(rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(rows)):
        raise DomainError("oracle_beams: non-finite entries")
    return np.argmax(rows, axis=1) + 1


def hybrid_target(r_iq, prior_mass, alpha_hybrid: float) -> HybridTarget:
    r_iq = np.asarray(r_iq, dtype=float)
    prior_mass = np.asarray(prior_mass, dtype=float)
    if r_iq.shape != prior_mass.shape:
        raise DomainError("reward and prior rows differ in length")
    if abs(prior_mass.sum() - 1.0) > 1e-9:
        raise DomainError("prior mass must sum to 1")
    if not 0.0 <= alpha_hybrid <= 1.0:
        raise DomainError("alpha_hybrid must lie in [0, 1]")
    values = alpha_hybrid * zscore_row(r_iq) + (1.0 - alpha_hybrid) * zscore_row(prior_mass)
    return HybridTarget(values, float(alpha_hybrid))


def hybrid_targets(rewards, prior_mass, alpha_hybrid: float) -> np.ndarray:
    """Row-wise hybrid targets for a ``(T, B)`` batch."""
    rewards = np.asarray(rewards, dtype=float)
    prior_mass = np.asarray(prior_mass, dtype=float)
    if rewards.shape != prior_mass.shape:
        raise DomainError("reward and prior batches differ in shape")
    return alpha_hybrid * zscore_rows(rewards) + (1.0 - alpha_hybrid) * zscore_rows(prior_mass)


def p2_objective(outcomes: Sequence, c_K: float, c_out: float, theta: float) -> float:
    """Empirical penalized objective: mean of SNR - c_K K - c_out 1{SNR < theta}."""
    if len(outcomes) == 0:
        raise DomainError("p2_objective needs at least one outcome")
    snr = np.array([o.locked_snr for o in outcomes], dtype=float)
    k = np.array([o.K for o in outcomes], dtype=float)
    return float(np.mean(snr - c_K * k - c_out * (snr < theta)))


# ---------------------------------------------------------------------------
# CSV import / export
# ---------------------------------------------------------------------------


def _write_matrix_csv(path, t: Iterable[int], matrix, prefix: str) -> None:
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{prefix}_{j + 1}" for j in range(matrix.shape[1])])
        for ti, row in zip(t, matrix):
            w.writerow([int(ti)] + [repr(float(v)) for v in row])


def _read_matrix_csv(path, prefix: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{path}: empty CSV")
    header = rows[0]
    expect = ["t"] + [f"{prefix}_{j + 1}" for j in range(len(header) - 1)]
    if header != expect or len(header) < 2:
        raise DomainError(f"{path}: header must be t,{prefix}_1,...; got {header[:4]}...")
    body = rows[1:]
    try:
        t = np.array([int(r[0]) for r in body], dtype=np.int64)
        m = np.array([[float(v) for v in r[1:]] for r in body], dtype=float)
    except (ValueError, IndexError) as exc:
        raise DomainError(f"{path}: malformed row ({exc})") from exc
    if m.ndim != 2 or m.shape[1] != len(header) - 1:
        raise DomainError(f"{path}: ragged rows")
    return t, m


def write_reward_csv(path, t, rewards) -> None:
    _write_matrix_csv(path, t, rewards, "beam")


def read_reward_csv(path) -> tuple[np.ndarray, np.ndarray]:
    t, m = _read_matrix_csv(path, "beam")
    if not np.all(np.isfinite(m)):
        raise DomainError(f"{path}: non-finite reward entries")
    return t, m


def write_feature_csv(path, t, features) -> None:
    _write_matrix_csv(path, t, features, "f")


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray]:
    return _read_matrix_csv(path, "f")
