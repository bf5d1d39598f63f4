"""Shared types, configuration schema, ring geometry and seeded randomness."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from . import kernels

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class BeamProbeError(Exception):
    """Base class for all package errors."""


class DomainError(BeamProbeError, ValueError):
    """An operation received inputs outside its domain."""


class ConfigError(BeamProbeError, ValueError):
    """Invalid configuration values or unknown configuration keys."""


class TrainingError(BeamProbeError, RuntimeError):
    """Training diverged (non-finite loss)."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Codebook:
    """Beam codebook with 1-based indices ``1..size``."""

    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise ConfigError(f"codebook size must be an integer >= 2, got {self.size}")

    @property
    def indices(self) -> np.ndarray:
        return np.arange(1, self.size + 1)

    def circ_dist(self, a: int, b: int) -> int:
        return circ_dist(a, b, self.size)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class PolicyConfig:
    """Knobs of the online probing policy.

    ``lambda_`` is written ``lambda`` in configuration files.  ``K_fixed`` is
    the budget used by the fixed-K policy variant.  ``keep_dominated_lock``
    keeps the previous lock even when it was just probed and lost to the best
    probe (off by default: the best probe is locked instead).
    """

    lambda_: float = 0.5
    beta: float = 0.5
    d_theta: int = 1
    H_low: float = 1.2
    H_high: float = 2.5
    K_min: int = 1
    K_mid: int = 2
    K_max: int = 4
    tau_gap: float = 0.05
    theta: float = 0.0
    delta: float = 3.0
    w: int = 2
    epsilon: float = 1e-8
    alpha_hybrid: float = 0.7
    c_K: float = 0.5
    c_out: float = 10.0
    K_fixed: int = 2
    keep_dominated_lock: bool = False

    def __post_init__(self):
        _check(0.0 <= self.lambda_ <= 1.0, "lambda must lie in [0, 1]")
        _check(self.beta >= 0.0, "beta must be >= 0")
        _check(_is_int(self.d_theta) and self.d_theta >= 0, "d_theta must be an integer >= 0")
        _check(self.H_low < self.H_high, "H_low must be < H_high")
        for name in ("K_min", "K_mid", "K_max", "K_fixed", "w"):
            _check(_is_int(getattr(self, name)), f"{name} must be an integer")
        _check(1 <= self.K_min < self.K_mid < self.K_max, "need 1 <= K_min < K_mid < K_max")
        _check(self.K_fixed >= 1, "K_fixed must be >= 1")
        _check(0.0 <= self.tau_gap <= 1.0, "tau_gap must lie in [0, 1]")
        _check(self.delta >= 0.0, "delta must be >= 0")
        _check(self.w >= 0, "w must be >= 0")
        _check(self.epsilon > 0.0, "epsilon must be > 0")
        _check(0.0 <= self.alpha_hybrid <= 1.0, "alpha_hybrid must lie in [0, 1]")
        _check(self.c_K >= 0.0 and self.c_out >= 0.0, "penalty weights must be >= 0")

    def check_codebook(self, B: int) -> None:
        """Budget limits that depend on the codebook size."""
        _check(self.K_max <= B, f"K_max={self.K_max} exceeds codebook size {B}")

    @property
    def margin_threshold(self) -> float:
        return self.theta + self.delta


@dataclass(frozen=True)
class TemperatureConfig:
    T0: float = 1.0
    T_min: float = 0.25
    T_max: float = 4.0
    alpha_temp: float = 2.0
    gamma: float = 0.5
    s_min: float = 0.2

    def __post_init__(self):
        _check(0.0 < self.T_min <= self.T0 <= self.T_max, "need 0 < T_min <= T0 <= T_max")
        _check(self.alpha_temp >= 0.0, "alpha_temp must be >= 0")
        _check(self.gamma >= 0.0, "gamma must be >= 0")
        _check(0.0 < self.s_min <= 1.0, "s_min must lie in (0, 1]")


@dataclass(frozen=True)
class SweepRecord:
    """One decision epoch.

    ``iq_power`` is a ``(B, N)`` array of ``|Z|^2`` samples; ``reward_row`` the
    per-beam SNR proxy in dB.  At least one of them must be given.
    ``oracle_beam`` is 1-based.
    """

    t: int
    features: np.ndarray
    iq_power: np.ndarray | None = None
    reward_row: np.ndarray | None = None
    oracle_beam: int | None = None

    def __post_init__(self):
        from .measurement import oracle_beam, snr_proxy_rows

        if self.iq_power is None and self.reward_row is None:
            raise DomainError("sweep needs iq_power or reward_row")
        row = self.reward_row
        if self.iq_power is not None:
            if np.any(np.asarray(self.iq_power) < 0):
                raise DomainError("iq power samples must be nonnegative")
            proxy = snr_proxy_rows(np.asarray(self.iq_power, dtype=float))
            if row is None:
                object.__setattr__(self, "reward_row", proxy)
                row = proxy
            elif np.max(np.abs(np.asarray(row) - proxy)) > 1e-9:
                raise DomainError(f"sweep {self.t}: reward_row disagrees with IQ proxy")
        if self.oracle_beam is not None and self.oracle_beam != oracle_beam(row):
            raise DomainError(f"sweep {self.t}: oracle_beam is not the reward argmax")

    @property
    def B(self) -> int:
        return len(self.reward_row)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def circ_dist(a, b, B: int):
    """Ring distance between 1-based beam indices (scalars or arrays)."""
    a_arr, b_arr = np.asarray(a), np.asarray(b)
    if np.any(a_arr < 1) or np.any(a_arr > B) or np.any(b_arr < 1) or np.any(b_arr > B):
        raise DomainError(f"beam index outside 1..{B}")
    d = np.abs(a_arr - b_arr)
    d = np.minimum(d, B - d)
    return int(d) if d.ndim == 0 else d


def zscore_row(v, eps: float = 1e-12) -> np.ndarray:
    """Standardize a vector to mean 0, population std 1.

    A row whose std is below ``eps`` carries no ranking information and maps
    to all zeros.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] < 2:
        raise DomainError("zscore_row needs a vector of length >= 2")
    return kernels.zscore_rows(v[None, :], eps)[0]


def zscore_rows(m, eps: float = 1e-12) -> np.ndarray:
    m = np.ascontiguousarray(m, dtype=float)
    if m.ndim != 2 or m.shape[1] < 2:
        raise DomainError("zscore_rows needs a 2-D array with >= 2 columns")
    return kernels.zscore_rows(m, eps)


def percentile(samples, p: float) -> float:
    """Linear-interpolation percentile at rank ``(n-1) p / 100``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("percentile of an empty sample")
    if not 0.0 <= p <= 100.0:
        raise DomainError(f"percentile level {p} outside [0, 100]")
    xs = np.sort(x)
    pos = (xs.size - 1) * p / 100.0
    lo = int(np.floor(pos))
    hi = min(lo + 1, xs.size - 1)
    return float(xs[lo] + (pos - lo) * (xs[hi] - xs[lo]))


def argmax_low(v) -> int:
    """0-based argmax; ties resolve to the lowest index (numpy semantics)."""
    return int(np.argmax(v))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the substream identified by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def digest(obj: Any) -> str:
    """Short sha256 of arrays, bytes or JSON-able objects."""
    h = hashlib.sha256()
    if isinstance(obj, np.ndarray):
        h.update(str(obj.dtype).encode())
        h.update(str(obj.shape).encode())
        h.update(np.ascontiguousarray(obj).tobytes())
    elif isinstance(obj, (bytes, bytearray)):
        h.update(obj)
    else:
        h.update(json.dumps(obj, sort_keys=True, default=_jsonable).encode())
    return h.hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return config_to_dict(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# Configuration files
# ---------------------------------------------------------------------------

_KEY_ALIASES = {"lambda": "lambda_"}


def read_config_file(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def build_dataclass(cls, section: Mapping[str, Any] | None, where: str):
    """Instantiate ``cls`` from a config section; unknown keys are an error."""
    section = dict(section or {})
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in section.items():
        attr = _KEY_ALIASES.get(key, key)
        if attr not in names:
            raise ConfigError(f"[{where}] unknown key {key!r}")
        kwargs[attr] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def config_to_dict(obj) -> dict:
    inverse = {v: k for k, v in _KEY_ALIASES.items()}
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        out[inverse.get(f.name, f.name)] = list(v) if isinstance(v, tuple) else v
    return out


def load_policy_config(path) -> tuple[PolicyConfig, TemperatureConfig]:
    """Read ``[policy]`` and ``[temperature]`` sections from a TOML file."""
    raw = read_config_file(path)
    unknown = set(raw) - {"policy", "temperature"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    return (
        build_dataclass(PolicyConfig, raw.get("policy"), "policy"),
        build_dataclass(TemperatureConfig, raw.get("temperature"), "temperature"),
    )


__all__ = [
    "BeamProbeError",
    "Codebook",
    "ConfigError",
    "DomainError",
    "PolicyConfig",
    "SweepRecord",
    "TemperatureConfig",
    "TrainingError",
    "argmax_low",
    "circ_dist",
    "config_to_dict",
    "digest",
    "load_policy_config",
    "make_rng",
    "percentile",
    "read_config_file",
    "zscore_row",
    "zscore_rows",
]
