"""Sensing-assisted adaptive beam probing.

Calibrated multimodal beam prior, Q-ensemble uncertainty, Prior-Q UCB probe
scheduling with an entropy-adaptive budget, and a margin-based lock shield,
evaluated on synthetic or imported beam-sweep data.
"""

from .core import (BeamProbeError, Codebook, ConfigError, DomainError, PolicyConfig,
                   SweepRecord, TemperatureConfig, TrainingError, circ_dist, percentile,
                   zscore_row)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BeamProbeError",
    "Codebook",
    "ConfigError",
    "DomainError",
    "PolicyConfig",
    "SweepRecord",
    "TemperatureConfig",
    "TrainingError",
    "circ_dist",
    "percentile",
    "zscore_row",
]
