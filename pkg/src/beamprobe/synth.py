"""Synthetic sweep datasets plus CSV import/export.

A scene is a bearing that random-walks around the ring of beam indices.  Each
beam's IQ recording is ``|a s + w|^2`` with a unit-modulus pilot ``s`` on a
fraction of the samples, unit-power complex Gaussian noise ``w`` (0 dB noise
floor) and a Gaussian beam-gain rolloff in index space.  Sensing features are
smoothed one-hot bearing histograms, one segment per modality, followed by the
modality mask flags.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (ConfigError, DomainError, SweepRecord, build_dataclass,
                   config_to_dict, digest, make_rng)
from .measurement import (oracle_beams, read_feature_csv, read_reward_csv,
                          snr_proxy_rows, write_feature_csv, write_reward_csv)

MODALITIES = ("radar", "lidar", "camera")
SPLITS = {"train": 0, "test": 1}
FEATURE_SMOOTHING = 1.0  # histogram bump width, in bins
LAYOUT_NOTE = "synthetic layout has no meta-feature segment"


@dataclass(frozen=True)
class SceneParams:
    B: int = 21
    n_sweeps: int = 2000
    samples_per_beam: int = 256
    peak_snr_db: float = 20.0
    beamwidth_sigma: float = 1.0
    bearing_noise_sigma: float = 0.6
    modality_mask: tuple = (True, True, True)
    drift_rate: float = 0.5
    seed: int = 0
    # relative bearing-noise multiplier per modality (radar, lidar, camera)
    modality_noise_scale: tuple = (3.0, 1.3, 1.0)
    pilot_fraction: float = 0.5

    def __post_init__(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(f"scene: {msg}")

        need(isinstance(self.B, int) and self.B >= 2, "B must be an integer >= 2")
        need(isinstance(self.n_sweeps, int) and self.n_sweeps >= 1, "n_sweeps must be >= 1")
        need(isinstance(self.samples_per_beam, int) and self.samples_per_beam >= 2,
             "samples_per_beam must be >= 2")
        need(self.beamwidth_sigma > 0, "beamwidth_sigma must be > 0")
        need(self.bearing_noise_sigma >= 0, "bearing_noise_sigma must be >= 0")
        need(self.drift_rate >= 0, "drift_rate must be >= 0")
        need(len(self.modality_mask) == 3, "modality_mask needs three flags")
        need(any(self.modality_mask), "at least one modality must be enabled")
        need(len(self.modality_noise_scale) == 3 and min(self.modality_noise_scale) > 0,
             "modality_noise_scale needs three positive values")
        need(0.0 < self.pilot_fraction <= 1.0, "pilot_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class SynthDataset:
    """Sweeps stored column-wise.

    ``features`` are raw; :meth:`standardized` applies the train-split
    statistics ``feat_mean`` / ``feat_std``.  ``layout`` maps segment name to a
    ``(start, stop)`` column range and is ``None`` for imported data without
    metadata.  Beam labels are 1-based.
    """

    t: np.ndarray
    features: np.ndarray
    rewards: np.ndarray
    oracle: np.ndarray
    feat_mean: np.ndarray
    feat_std: np.ndarray
    split: str
    layout: dict | None = None
    mask: tuple = (True, True, True)
    true_beam: np.ndarray | None = None
    iq_power: np.ndarray | None = None
    beam_map: np.ndarray | None = None
    params: SceneParams | None = None
    notes: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.t)

    @property
    def B(self) -> int:
        return self.rewards.shape[1]

    @property
    def D(self) -> int:
        return self.features.shape[1]

    def standardized(self) -> np.ndarray:
        return (self.features - self.feat_mean) / self.feat_std

    def sweep(self, i: int) -> SweepRecord:
        return SweepRecord(
            t=int(self.t[i]),
            features=self.standardized()[i],
            iq_power=None if self.iq_power is None else self.iq_power[i],
            reward_row=self.rewards[i],
            oracle_beam=int(self.oracle[i]),
        )

    def __iter__(self):
        xs = self.standardized()
        for i in range(len(self)):
            yield SweepRecord(int(self.t[i]), xs[i], None, self.rewards[i], int(self.oracle[i]))

    def digest(self) -> str:
        return digest(np.concatenate([self.features.ravel(), self.rewards.ravel(),
                                      self.feat_mean, self.feat_std]))


def feature_layout(B: int) -> dict:
    layout = {m: (i * B, (i + 1) * B) for i, m in enumerate(MODALITIES)}
    layout["mask"] = (3 * B, 3 * B + 3)
    return layout


def feature_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean/std; constant columns get unit scale."""
    mu = features.mean(axis=0)
    sd = features.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return mu, sd


def _ring_dist(a, b, B):
    d = np.abs(a - b) % B
    return np.minimum(d, B - d)


def bearing_histogram(bearing: np.ndarray, B: int) -> np.ndarray:
    """Smoothed one-hot encoding of continuous bearings (0-based bins)."""
    bins = np.arange(B)
    d = _ring_dist(bins[None, :], np.asarray(bearing)[:, None], B)
    return np.exp(-0.5 * (d / FEATURE_SMOOTHING) ** 2)


def generate(params: SceneParams, split: str = "train", stats=None,
             keep_iq: bool = False) -> SynthDataset:
    """Generate one split of a scene.

    Every random draw for sweep ``t`` comes from the substream
    ``(seed, split, t)``, so the result does not depend on evaluation order.
    ``stats`` (mean, std) must be passed for the test split; the train split
    computes its own.
    """
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    if split == "test" and stats is None:
        raise ConfigError("test split needs the train-split feature statistics")
    B, T, N = params.B, params.n_sweeps, params.samples_per_beam
    sid = SPLITS[split]
    n_pilot = max(1, int(round(params.pilot_fraction * N)))
    peak = 10.0 ** (params.peak_snr_db / 10.0)
    scales = np.asarray(params.modality_noise_scale, dtype=float)
    beams = np.arange(B)

    start = make_rng(params.seed, sid, 2).uniform(0.0, B)
    steps = np.zeros(T)
    bearing_err = np.empty((T, 3))
    for t in range(T):
        rng = make_rng(params.seed, sid, t, 0)
        step = rng.normal(0.0, params.drift_rate)
        if t:
            steps[t] = step
        bearing_err[t] = rng.normal(0.0, 1.0, size=3)
    bearing = np.mod(start + np.cumsum(steps), B)
    true_beam = np.mod(np.rint(bearing).astype(np.int64), B)
    amp = np.sqrt(peak * np.exp(-0.5 * (_ring_dist(beams[None, :], true_beam[:, None], B)
                                        / params.beamwidth_sigma) ** 2))

    power = np.empty((T, B, N))
    for t in range(T):
        rng = make_rng(params.seed, sid, t, 1)
        z = (rng.normal(size=(B, N)) + 1j * rng.normal(size=(B, N))) / np.sqrt(2.0)
        phase = np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=B))
        z[:, :n_pilot] += (amp[t] * phase)[:, None]
        power[t] = z.real ** 2 + z.imag ** 2

    rewards = snr_proxy_rows(power)
    features = _encode_features(bearing, bearing_err, params.bearing_noise_sigma * scales,
                                params.modality_mask, B)
    if stats is None:
        stats = feature_stats(features)
    mu, sd = (np.asarray(s, dtype=float) for s in stats)
    return SynthDataset(
        t=np.arange(T, dtype=np.int64),
        features=features,
        rewards=rewards,
        oracle=oracle_beams(rewards),
        feat_mean=mu,
        feat_std=sd,
        split=split,
        layout=feature_layout(B),
        mask=tuple(bool(m) for m in params.modality_mask),
        true_beam=true_beam + 1,
        iq_power=power if keep_iq else None,
        beam_map=np.arange(1, B + 1),
        params=params,
        notes=(LAYOUT_NOTE,),
    )


def _encode_features(bearing, unit_err, sigmas, mask, B):
    T = bearing.shape[0]
    segs = []
    for m in range(3):
        if mask[m]:
            segs.append(bearing_histogram(bearing + sigmas[m] * unit_err[:, m], B))
        else:
            segs.append(np.zeros((T, B)))
    segs.append(np.tile(np.asarray(mask, dtype=float), (T, 1)))
    return np.concatenate(segs, axis=1)


def generate_splits(params: SceneParams, n_test: int | None = None,
                    keep_iq: bool = False) -> tuple[SynthDataset, SynthDataset]:
    """Train split of ``params.n_sweeps`` sweeps and a test split reusing its statistics."""
    train = generate(params, "train", keep_iq=keep_iq)
    test_params = params if n_test is None else dataclasses.replace(params, n_sweeps=n_test)
    test = generate(test_params, "test", stats=(train.feat_mean, train.feat_std),
                    keep_iq=keep_iq)
    return train, test


def mask_modalities(ds: SynthDataset, mask) -> SynthDataset:
    """Zero the feature segments of modalities whose flag is False."""
    mask = tuple(bool(m) for m in mask)
    if len(mask) != 3:
        raise DomainError("mask needs three flags (radar, lidar, camera)")
    if not any(mask):
        raise DomainError("cannot mask every modality")
    if ds.layout is None or any(m not in ds.layout for m in MODALITIES):
        raise DomainError("dataset has no modality layout")
    feats = ds.features.copy()
    new_mask = tuple(a and b for a, b in zip(ds.mask, mask))
    for name, keep in zip(MODALITIES, mask):
        if not keep:
            lo, hi = ds.layout[name]
            feats[:, lo:hi] = 0.0
    lo, hi = ds.layout["mask"]
    feats[:, lo:hi] = np.asarray(new_mask, dtype=float)
    return dataclasses.replace(ds, features=feats, mask=new_mask)


def subcodebook_indices(B: int, B_used: int) -> np.ndarray:
    """Uniform-stride 1-based beam indices, first and last beam always kept."""
    if B_used < 2:
        raise DomainError("subcodebook needs at least 2 beams")
    if B_used > B:
        raise DomainError(f"B_used={B_used} exceeds B={B}")
    j = np.arange(B_used)
    return np.floor(1.0 + j * (B - 1) / (B_used - 1) + 0.5).astype(np.int64)


def subcodebook(ds: SynthDataset, B_used: int) -> SynthDataset:
    idx = subcodebook_indices(ds.B, B_used)
    if B_used == ds.B:
        return ds
    cols = idx - 1
    rewards = ds.rewards[:, cols]
    base_map = ds.beam_map if ds.beam_map is not None else np.arange(1, ds.B + 1)
    return dataclasses.replace(
        ds,
        rewards=rewards,
        oracle=oracle_beams(rewards),
        iq_power=None if ds.iq_power is None else ds.iq_power[:, cols],
        beam_map=base_map[cols],
    )


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def export_dataset(ds: SynthDataset, out_dir, name: str | None = None) -> dict:
    """Write rewards CSV, features CSV and a JSON metadata sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = name or ds.split
    paths = {
        "rewards": out_dir / f"{name}_rewards.csv",
        "features": out_dir / f"{name}_features.csv",
        "meta": out_dir / f"{name}_meta.json",
    }
    write_reward_csv(paths["rewards"], ds.t, ds.rewards)
    write_feature_csv(paths["features"], ds.t, ds.features)
    meta = {
        "split": ds.split,
        "scene": None if ds.params is None else config_to_dict(ds.params),
        "layout": None if ds.layout is None else {k: list(v) for k, v in ds.layout.items()},
        "mask": list(ds.mask),
        "feature_mean": [float(v) for v in ds.feat_mean],
        "feature_std": [float(v) for v in ds.feat_std],
        "beam_map": None if ds.beam_map is None else [int(b) for b in ds.beam_map],
        "notes": list(ds.notes),
    }
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def import_dataset(rewards_csv, features_csv, meta_json=None, split: str = "train",
                   stats=None) -> SynthDataset:
    """Load an externally produced dataset.

    Without a metadata sidecar the feature layout is unknown (modality masking
    is then unavailable).  Statistics come from, in order: ``stats``, the
    sidecar, or the data itself (train split only).
    """
    t_r, rewards = read_reward_csv(rewards_csv)
    t_f, feats = read_feature_csv(features_csv)
    if not np.array_equal(t_r, t_f):
        raise DomainError("reward and feature CSVs are not aligned by t")
    layout, mask, params, beam_map, notes = None, (True, True, True), None, None, ()
    meta = None
    if meta_json is not None:
        meta = json.loads(Path(meta_json).read_text(encoding="utf-8"))
        split = meta.get("split", split)
        if meta.get("layout"):
            layout = {k: tuple(v) for k, v in meta["layout"].items()}
        mask = tuple(meta.get("mask", mask))
        if meta.get("scene"):
            params = build_dataclass(SceneParams, meta["scene"], "scene")
        if meta.get("beam_map"):
            beam_map = np.asarray(meta["beam_map"], dtype=np.int64)
        notes = tuple(meta.get("notes", ()))
    if stats is None and meta is not None and "feature_mean" in meta:
        stats = (meta["feature_mean"], meta["feature_std"])
    if stats is None:
        if split != "train":
            raise ConfigError("imported test split needs train feature statistics")
        stats = feature_stats(feats)
    mu, sd = (np.asarray(s, dtype=float) for s in stats)
    if mu.shape != (feats.shape[1],):
        raise DomainError("feature statistics do not match feature dimension")
    return SynthDataset(
        t=t_r, features=feats, rewards=rewards, oracle=oracle_beams(rewards),
        feat_mean=mu, feat_std=sd, split=split, layout=layout, mask=mask,
        beam_map=beam_map, params=params, notes=notes,
    )
