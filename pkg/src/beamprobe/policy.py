"""Online decision layer: scoring, budget, probe selection, shielded lock, baselines.

Beam indices in every public structure here are 1-based.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .core import (ConfigError, DomainError, PolicyConfig, TemperatureConfig,
                   make_rng, zscore_row, zscore_rows)
from .prior import CalibratedPrior, PriorModel, calibrate_rows, standardize_logits
from .qensemble import EnsembleEstimate, QEnsemble, estimate_rows

log = logging.getLogger(__name__)

PMF_FLOOR = 1e-12
POLICIES = ("random", "prior_argmax", "linucb", "ours_fixed", "ours_adaptive")


@dataclass(frozen=True)
class ProbePlan:
    scores: np.ndarray
    K: int
    beams: np.ndarray
    entropy: float = float("nan")
    gap: float = float("nan")
    relaxed: int = 0


@dataclass(frozen=True)
class ShieldState:
    """Previous lock (``None`` before the first sweep) and last-known SNR per beam."""

    prev_lock: int | None
    last_known: np.ndarray

    @classmethod
    def fresh(cls, B: int) -> "ShieldState":
        return cls(None, np.full(B, np.nan))


@dataclass(frozen=True)
class SweepOutcome:
    t: int
    b_best: int
    b_lock: int
    locked_snr: float
    K: int
    shield: bool
    outage: bool
    probed: tuple = ()
    best_snr: float = float("nan")
    cold_start: bool = False


@dataclass
class Models:
    prior: PriorModel | None = None
    ensemble: QEnsemble | None = None


# ---------------------------------------------------------------------------
# Scoring, budget, selection
# ---------------------------------------------------------------------------


def _floored_log(pmf):
    pmf = np.asarray(pmf, dtype=float)
    if np.any(pmf < 0):
        raise DomainError("negative probability mass")
    floored = np.maximum(pmf, PMF_FLOOR)
    return np.log(floored)


def score_beams(prior, est, lambda_: float, beta: float) -> np.ndarray:
    """Prior-Q UCB score per beam.

    ``prior`` may be a :class:`CalibratedPrior` or a bare pmf; ``est`` an
    :class:`EnsembleEstimate` or a ``(mu, sigma_hat)`` pair.
    """
    pmf = prior.pmf if isinstance(prior, CalibratedPrior) else prior
    mu, sig = (est.mu, est.sigma_hat) if isinstance(est, EnsembleEstimate) else est
    return ((1.0 - lambda_) * zscore_row(mu) + lambda_ * _floored_log(pmf)
            + beta * np.asarray(sig, dtype=float))


def score_rows(pmf, mu, sigma_hat, lambda_: float, beta: float) -> np.ndarray:
    return (1.0 - lambda_) * zscore_rows(mu) + lambda_ * _floored_log(pmf) + beta * sigma_hat


def top_gap(pmf) -> float:
    """Difference between the largest and third-largest prior mass."""
    p = np.sort(np.asarray(pmf, dtype=float))[::-1]
    return float(p[0] - p[2])


def adapt_budget(H: float, pmf, cfg: PolicyConfig) -> int:
    if H <= cfg.H_low:
        k = cfg.K_min
    elif H >= cfg.H_high:
        k = cfg.K_max
    else:
        k = cfg.K_mid
    if cfg.tau_gap > 0:
        if len(pmf) < 3:
            raise DomainError("gap rule needs at least 3 beams")
        if top_gap(pmf) < cfg.tau_gap:
            k = min(k + 1, cfg.K_max)
    return k


def _select(scores, K: int, d_theta: int):
    scores = np.ascontiguousarray(scores, dtype=float)
    B = scores.shape[0]
    if K > B:
        raise DomainError(f"K={K} exceeds codebook size {B}")
    if K < 1:
        raise DomainError("K must be >= 1")
    picked, relaxed = kernels.greedy_select(scores, int(K), int(d_theta))
    return np.asarray(picked, dtype=np.int64) + 1, int(relaxed)


def select_probe_set(scores, K: int, d_theta: int, B: int | None = None) -> np.ndarray:
    """Greedy descending-score selection with minimum circular separation.

    When fewer than K beams can be kept ``d_theta`` apart, the separation is
    relaxed one step at a time until the set is full.
    """
    if B is not None and len(scores) != B:
        raise DomainError("scores length does not match B")
    beams, relaxed = _select(scores, K, d_theta)
    if relaxed:
        log.debug("probe-set separation relaxed by %d", relaxed)
    return beams


def make_plan(scores, pmf, H, K, d_theta) -> ProbePlan:
    beams, relaxed = _select(scores, K, d_theta)
    gap = top_gap(pmf) if pmf is not None and len(pmf) >= 3 else float("nan")
    return ProbePlan(np.asarray(scores), int(K), beams, float(H), gap, relaxed)


# ---------------------------------------------------------------------------
# Probe and lock
# ---------------------------------------------------------------------------


def probe_and_lock(plan: ProbePlan, measure: Callable, shield: ShieldState,
                   cfg: PolicyConfig, link: Callable | None = None, t: int = 0):
    """Probe ``plan.beams`` through ``measure`` and apply the margin shield.

    ``measure(beams)`` returns the SNR proxy (dB) of the requested 1-based
    beams and is only ever called with the plan's probe set.  ``link(b)``
    reports the SNR of the beam finally locked (the data phase); without it
    the last-known value is used.  Returns ``(SweepOutcome, ShieldState)``.
    """
    beams = np.asarray(plan.beams, dtype=np.int64)
    if beams.size == 0:
        raise DomainError("empty probe set")
    snr = np.asarray(measure(beams), dtype=float)
    if snr.shape != beams.shape:
        raise DomainError("measurement returned the wrong number of values")
    last_known = shield.last_known.copy()
    prev = -1 if shield.prev_lock is None else shield.prev_lock - 1
    b_best, b_lock, cold = kernels.shield_lock(beams - 1, snr, last_known, prev,
                                               int(cfg.w), float(cfg.margin_threshold),
                                               bool(cfg.keep_dominated_lock))
    b_best, b_lock = int(b_best) + 1, int(b_lock) + 1
    if cold:
        log.info("sweep %d: shield trigger with no previous lock; locking best probe", t)
    locked = float(link(b_lock)) if link is not None else float(last_known[b_lock - 1])
    best_snr = float(snr[np.flatnonzero(beams == b_best)[0]])
    outcome = SweepOutcome(
        t=t, b_best=b_best, b_lock=b_lock, locked_snr=locked, K=int(beams.size),
        shield=b_lock != b_best, outage=locked < cfg.theta,
        probed=tuple(int(b) for b in beams), best_snr=best_snr, cold_start=bool(cold),
    )
    return outcome, ShieldState(b_lock, last_known)


# ---------------------------------------------------------------------------
# LinUCB baseline
# ---------------------------------------------------------------------------


class LinUCB:
    """Disjoint LinUCB with a bias feature, using Sherman-Morrison updates.

    With ``center_rewards`` the regression targets are the rewards minus the
    running mean of all observed rewards; the textbook algorithm (default)
    regresses on the raw dB values.
    """

    def __init__(self, n_arms: int, dim: int, alpha: float = 1.0, ridge: float = 1.0,
                 center_rewards: bool = False):
        if ridge <= 0:
            raise ConfigError("LinUCB ridge must be > 0")
        self.alpha = alpha
        self.center_rewards = center_rewards
        self.d = dim + 1
        self.A_inv = np.repeat(np.eye(self.d)[None] / ridge, n_arms, axis=0)
        self.b = np.zeros((n_arms, self.d))
        self.n_obs = 0
        self.reward_mean = 0.0

    def _ctx(self, x):
        return np.append(np.asarray(x, dtype=float), 1.0)

    def ucb(self, x) -> np.ndarray:
        c = self._ctx(x)
        theta = np.einsum("aij,aj->ai", self.A_inv, self.b)
        Ac = self.A_inv @ c
        width = np.sqrt(np.maximum(Ac @ c, 0.0))
        return theta @ c + self.alpha * width

    def update(self, arm: int, x, reward: float) -> None:
        """``arm`` is 0-based."""
        c = self._ctx(x)
        Ai = self.A_inv[arm]
        Ac = Ai @ c
        self.A_inv[arm] = Ai - np.outer(Ac, Ac) / (1.0 + c @ Ac)
        if self.center_rewards:
            self.n_obs += 1
            self.reward_mean += (reward - self.reward_mean) / self.n_obs
            reward = reward - self.reward_mean
        self.b[arm] += reward * c


# ---------------------------------------------------------------------------
# Policy runner
# ---------------------------------------------------------------------------


def ours_inputs(models: Models, X, cfg: PolicyConfig, temp: TemperatureConfig):
    """Batched per-sweep quantities for the full pipeline.

    Exactly one prior pass and M ensemble passes per row of ``X``.
    """
    z_std = standardize_logits(models.prior.logits(X), models.prior.stats)
    mu, tau, sig = estimate_rows(models.ensemble, X, cfg.epsilon)
    u_norm = sig.mean(axis=1)
    pmf, H, s_hat, T_eff = calibrate_rows(z_std, u_norm, temp)
    scores = score_rows(pmf, mu, sig, cfg.lambda_, cfg.beta)
    return {"pmf": pmf, "H": H, "scores": scores, "mu": mu, "tau": tau,
            "sigma_hat": sig, "T_eff": T_eff, "s_hat": s_hat}


def run_policy(name: str, ds, models: Models | None = None,
               cfg: PolicyConfig | None = None, seed: int = 0,
               temp: TemperatureConfig | None = None,
               linucb_alpha: float = 1.0, linucb_ridge: float = 1.0,
               linucb_center: bool = False, trace: list | None = None) -> list[SweepOutcome]:
    """Replay a dataset under one policy.

    Policies: ``random`` (K=1), ``prior_argmax`` (K=1), ``linucb``
    (K=cfg.K_fixed), ``ours_fixed`` (K=cfg.K_fixed) and ``ours_adaptive``.
    The online loop only sees features and the probed entries of each reward
    row.  ``trace`` receives one JSON line per sweep.
    """
    if name not in POLICIES:
        raise ConfigError(f"unknown policy {name!r}; expected one of {POLICIES}")
    cfg = cfg or PolicyConfig()
    temp = temp or TemperatureConfig()
    models = models or Models()
    B = ds.B
    if name == "ours_adaptive":
        cfg.check_codebook(B)
    if name in ("prior_argmax", "ours_fixed", "ours_adaptive") and models.prior is None:
        raise ConfigError(f"policy {name} needs a trained prior")
    if name.startswith("ours") and models.ensemble is None:
        raise ConfigError(f"policy {name} needs a trained Q-ensemble")
    X = ds.standardized()
    rewards = ds.rewards
    T = len(ds)

    pmf = H = scores = None
    if name.startswith("ours"):
        pre = ours_inputs(models, X, cfg, temp)
        pmf, H, scores = pre["pmf"], pre["H"], pre["scores"]
    elif name == "prior_argmax":
        z_std = standardize_logits(models.prior.logits(X), models.prior.stats)
        pmf, H, _, _ = calibrate_rows(z_std, np.zeros(T), temp)
    rng = make_rng(seed, 301)
    bandit = LinUCB(B, X.shape[1], linucb_alpha, linucb_ridge, linucb_center) if name == "linucb" else None

    shield = ShieldState.fresh(B)
    outcomes = []
    for i in range(T):
        row = rewards[i]
        if name == "random":
            s = np.zeros(B)
            s[rng.integers(B)] = 1.0
            plan = make_plan(s, None, float("nan"), 1, 0)
        elif name == "prior_argmax":
            plan = make_plan(pmf[i], pmf[i], H[i], 1, 0)
        elif name == "linucb":
            plan = make_plan(bandit.ucb(X[i]), None, float("nan"), cfg.K_fixed, 0)
        else:
            K = cfg.K_fixed if name == "ours_fixed" else adapt_budget(H[i], pmf[i], cfg)
            plan = make_plan(scores[i], pmf[i], H[i], K, cfg.d_theta)
        if plan.relaxed:
            log.debug("sweep %d: separation relaxed by %d", i, plan.relaxed)

        allowed = set(plan.beams.tolist())

        def measure(beams, row=row, allowed=allowed):
            if not set(np.asarray(beams).tolist()) <= allowed:
                raise DomainError("measurement requested outside the probe set")
            return row[np.asarray(beams) - 1]

        out, shield = probe_and_lock(plan, measure, shield, cfg,
                                     link=lambda b, row=row: row[b - 1], t=int(ds.t[i]))
        if bandit is not None:
            for b in plan.beams:
                bandit.update(int(b) - 1, X[i], float(row[b - 1]))
        outcomes.append(out)
        if trace is not None:
            trace.append(json.dumps({
                "t": out.t, "K": out.K, "S": list(out.probed),
                "H": None if np.isnan(plan.entropy) else round(float(plan.entropy), 6),
                "g": None if np.isnan(plan.gap) else round(float(plan.gap), 6),
                "b_best": out.b_best, "b_lock": out.b_lock,
                "shield": out.shield, "outage": out.outage,
            }, sort_keys=True))
    return outcomes
