"""Experiment orchestration: metrics, reports, ablations and codebook sweeps."""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (BeamProbeError, ConfigError, DomainError, PolicyConfig,
                   TemperatureConfig, build_dataclass, config_to_dict, digest,
                   percentile, read_config_file)
from .measurement import p2_objective
from .policy import POLICIES, Models, SweepOutcome, run_policy
from .prior import PriorModel, train_prior
from .qensemble import QEnsemble, train_ensemble
from .synth import (MODALITIES, SceneParams, SynthDataset, generate_splits,
                    import_dataset, mask_modalities, subcodebook)

log = logging.getLogger(__name__)

MODALITY_SETTINGS = {
    "all_sensors": (True, True, True),
    "no_camera": (True, True, False),
    "no_lidar": (True, False, True),
    "no_radar": (False, True, True),
    "radar_only": (True, False, False),
    "lidar_only": (False, True, False),
    "camera_only": (False, False, True),
}
SCORE_VARIANTS = {
    "full": {},
    "q_only": {"lambda_": 0.0},
    "prior_only": {"lambda_": 1.0},
    "no_bonus": {"beta": 0.0},
}


class StageError(BeamProbeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (BeamProbeError, OSError, ValueError, KeyError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSection:
    name: str = "default"
    seeds: tuple = (0,)
    policies: tuple = POLICIES
    n_test: int = 2000
    trace: bool = False

    def __post_init__(self):
        bad = [p for p in self.policies if p not in POLICIES]
        if bad:
            raise ConfigError(f"[experiment] unknown policies {bad}")
        if not self.seeds:
            raise ConfigError("[experiment] seeds must be nonempty")


@dataclass(frozen=True)
class DataSection:
    """Optional CSV import paths; when ``train_rewards`` is empty a scene is generated."""

    train_rewards: str = ""
    train_features: str = ""
    train_meta: str = ""
    test_rewards: str = ""
    test_features: str = ""
    test_meta: str = ""


@dataclass(frozen=True)
class TrainingConfig:
    prior_epochs: int = 40
    prior_lr: float = 0.05
    batch: int = 64
    label_temp: float = 1.0
    hidden: tuple = (64, 64)
    M: int = 5
    ens_epochs: int = 30
    ens_lr: float = 0.02
    bootstrap: bool = True
    max_grad_norm: float = 10.0  # 0 disables clipping

    def __post_init__(self):
        if min(self.prior_epochs, self.ens_epochs) < 0:
            raise ConfigError("training: epochs must be >= 0")
        if min(self.prior_lr, self.ens_lr) <= 0 or self.batch < 1:
            raise ConfigError("training: learning rates must be > 0 and batch >= 1")
        if self.M < 2:
            raise ConfigError("training: M must be >= 2")
        if self.label_temp <= 0 or self.max_grad_norm < 0:
            raise ConfigError("training: label_temp must be > 0 and max_grad_norm >= 0")


@dataclass(frozen=True)
class LinUCBConfig:
    alpha: float = 1.0
    ridge: float = 1.0
    center_rewards: bool = False


@dataclass(frozen=True)
class SweepSection:
    codebook_sizes: tuple = (9, 13, 17, 21)
    policies: tuple = ("ours_adaptive",)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    scene: SceneParams = field(default_factory=SceneParams)
    data: DataSection = field(default_factory=DataSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    linucb: LinUCBConfig = field(default_factory=LinUCBConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    temperature: TemperatureConfig = field(default_factory=TemperatureConfig)
    sweep: SweepSection = field(default_factory=SweepSection)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            section_cls = f.default_factory().__class__
            kwargs[f.name] = build_dataclass(section_cls, raw.get(f.name), f.name)
        return cls(**kwargs)

    @classmethod
    def load(cls, path=None, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        raw = read_config_file(path) if path else {}
        for item in overrides:
            apply_override(raw, item)
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {f.name: config_to_dict(getattr(self, f.name)) for f in dataclasses.fields(self)}

    def digest(self) -> str:
        return digest(self.to_dict())

    def replace(self, section: str, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section),
                                                                         **changes)})


def apply_override(raw: dict, item: str) -> None:
    """Apply ``section.key=value``; the value is parsed as a TOML literal."""
    from .core import tomllib

    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {item!r}")
    lhs, rhs = item.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {rhs.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = rhs.strip()
    raw.setdefault(section, {})[key] = value


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def top3_sets(rewards) -> np.ndarray:
    """1-based indices of the three best beams per row; ties go to the lower index."""
    rewards = np.asarray(rewards, dtype=float)
    return np.argsort(-rewards, axis=1, kind="stable")[:, :3] + 1


def compute_metrics(outcomes: Sequence[SweepOutcome], oracle_rows, theta: float,
                    c_K: float = 0.0, c_out: float = 0.0, t=None) -> dict:
    """Per-policy summary: Top-1/3, overhead, outage, shield rate, SNR stats, penalized objective."""
    rows = np.asarray(oracle_rows, dtype=float)
    if len(outcomes) == 0:
        raise DomainError("no outcomes")
    if rows.ndim != 2 or rows.shape[0] != len(outcomes):
        raise DomainError("outcomes and oracle rows are not aligned")
    if t is not None and [o.t for o in outcomes] != [int(v) for v in t]:
        raise DomainError("outcome sweep indices do not match the oracle rows")
    lock = np.array([o.b_lock for o in outcomes])
    oracle = np.argmax(rows, axis=1) + 1
    top3 = top3_sets(rows)
    snr = np.array([o.locked_snr for o in outcomes], dtype=float)
    report = {
        "n_sweeps": len(outcomes),
        "top1": float(np.mean(lock == oracle)),
        "top3": float(np.mean((top3 == lock[:, None]).any(axis=1))),
        "mean_K": float(np.mean([o.K for o in outcomes])),
        "outage_rate": float(np.mean(snr < theta)),
        "shield_rate": float(np.mean([o.shield for o in outcomes])),
        "snr_mean": float(snr.mean()),
        "snr_p05": percentile(snr, 5.0),
        "p2_value": p2_objective(outcomes, c_K, c_out, theta),
    }
    report["p05_above_mean"] = report["snr_p05"] > report["snr_mean"]
    return report


def snr_cdf_rows(outcomes: Sequence[SweepOutcome]) -> list[tuple[str, float, float]]:
    """Empirical step CDF of locked SNR plus ``mean`` and ``p05`` marker rows."""
    snr = np.sort(np.array([o.locked_snr for o in outcomes], dtype=float))
    if snr.size == 0:
        raise DomainError("no outcomes")
    n = snr.size
    rows = []
    for i, v in enumerate(snr):
        if i + 1 < n and snr[i + 1] == v:
            continue
        rows.append(("point", float(v), (i + 1) / n))
    for label, v in (("mean", float(snr.mean())), ("p05", percentile(snr, 5.0))):
        rows.append((label, v, float(np.searchsorted(snr, v, side="right")) / n))
    return rows


def snr_cdf_export(outcomes: Sequence[SweepOutcome], path=None) -> list:
    rows = snr_cdf_rows(outcomes)
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "snr_db", "cdf"])
            for kind, v, c in rows:
                w.writerow([kind, repr(v), repr(c)])
    return rows


# ---------------------------------------------------------------------------
# Pipeline pieces
# ---------------------------------------------------------------------------


def load_datasets(cfg: ExperimentConfig) -> tuple[SynthDataset, SynthDataset]:
    d = cfg.data
    if d.train_rewards:
        train = import_dataset(d.train_rewards, d.train_features, d.train_meta or None, "train")
        if not d.test_rewards:
            raise ConfigError("data.test_rewards is required when importing")
        test = import_dataset(d.test_rewards, d.test_features, d.test_meta or None, "test",
                              stats=(train.feat_mean, train.feat_std))
        return train, dataclasses.replace(test, split="test")
    return generate_splits(cfg.scene, n_test=cfg.experiment.n_test)


def train_models(cfg: ExperimentConfig, train: SynthDataset, seed: int) -> Models:
    tr = cfg.training
    clip = tr.max_grad_norm if tr.max_grad_norm > 0 else None
    with stage("train-prior"):
        prior = train_prior(train, tr.prior_epochs, tr.prior_lr, tr.batch, tr.label_temp,
                            seed=seed, hidden=tuple(tr.hidden), epsilon=cfg.policy.epsilon,
                            max_grad_norm=clip)
    with stage("train-ensemble"):
        ens = train_ensemble(train, prior, tr.M, tr.ens_epochs, tr.ens_lr, tr.batch,
                             seed=seed, alpha_hybrid=cfg.policy.alpha_hybrid,
                             hidden=tuple(tr.hidden), bootstrap=tr.bootstrap,
                             max_grad_norm=clip)
    return Models(prior, ens)


def evaluate_policies(cfg: ExperimentConfig, test: SynthDataset, models: Models, seed: int,
                      policies=None, policy_cfg: PolicyConfig | None = None,
                      traces: dict | None = None):
    """Run each policy; returns ``{name: (metrics, outcomes)}`` with an inference audit."""
    pcfg = policy_cfg or cfg.policy
    results = {}
    for name in policies or cfg.experiment.policies:
        for net in _nets(models):
            net.n_forward = 0
        trace = [] if traces is not None else None
        with stage(f"eval-{name}"):
            outs = run_policy(name, test, models, pcfg, seed=seed, temp=cfg.temperature,
                              linucb_alpha=cfg.linucb.alpha, linucb_ridge=cfg.linucb.ridge,
                              linucb_center=cfg.linucb.center_rewards, trace=trace)
            metrics = compute_metrics(outs, test.rewards, pcfg.theta, pcfg.c_K, pcfg.c_out,
                                      t=test.t)
        metrics["inference"] = inference_audit(models, len(test))
        if traces is not None:
            traces[name] = trace
        results[name] = (metrics, outs)
    return results


def _nets(models: Models):
    nets = []
    if models.prior is not None:
        nets.append(models.prior.net)
    if models.ensemble is not None:
        nets.extend(models.ensemble.members)
    return nets


def inference_audit(models: Models, n_sweeps: int) -> dict:
    prior = models.prior.net.n_forward if models.prior is not None else 0
    ens = models.ensemble.n_forward if models.ensemble is not None else 0
    return {"prior_passes_per_sweep": prior / n_sweeps,
            "ensemble_passes_per_sweep": ens / n_sweeps}


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_bars(path, rows: dict) -> None:
    cols = ["top1", "top3", "mean_K", "snr_mean", "snr_p05", "outage_rate", "shield_rate",
            "p2_value"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting"] + cols)
        for name, m in rows.items():
            w.writerow([name] + [repr(float(m[c])) for c in cols])


def write_manifest(out_dir) -> Path:
    out_dir = Path(out_dir)
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {str(p.relative_to(out_dir)): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in files}
    path = out_dir / "manifest.json"
    write_json(path, {"files": manifest})
    return path


def _meta(cfg, train, test, seed) -> dict:
    return {"experiment": cfg.experiment.name, "run_seed": int(seed),
            "scene_seed": int(cfg.scene.seed), "config_digest": cfg.digest(),
            "dataset_digest": {"train": train.digest(), "test": test.digest()},
            "dataset_notes": list(test.notes)}


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def run_experiment(config, out_dir, seeds=None, models_dir=None) -> list[dict]:
    """Train on the train split, evaluate every configured policy on the test split.

    Writes, per seed, ``seed_<s>/report.json``, ``bars.csv`` and one
    ``snr_cdf_<policy>.csv`` per policy (plus ``trace_<policy>.jsonl`` when
    tracing), then a top-level ``manifest.json``.  Returns the reports.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with stage("load-data"):
        train, test = load_datasets(cfg)
    reports = []
    for seed in seeds if seeds is not None else cfg.experiment.seeds:
        sdir = out_dir / f"seed_{seed}"
        sdir.mkdir(exist_ok=True)
        if models_dir is not None:
            with stage("load-models"):
                models = load_models(models_dir, seed)
        else:
            models = train_models(cfg, train, seed)
        traces = {} if cfg.experiment.trace else None
        results = evaluate_policies(cfg, test, models, seed, traces=traces)
        report = {"meta": _meta(cfg, train, test, seed),
                  "policies": {name: m for name, (m, _) in results.items()}}
        with stage("write-report"):
            write_json(sdir / "report.json", report)
            write_bars(sdir / "bars.csv", report["policies"])
            for name, (_, outs) in results.items():
                snr_cdf_export(outs, sdir / f"snr_cdf_{name}.csv")
                if traces is not None:
                    (sdir / f"trace_{name}.jsonl").write_text(
                        "".join(line + "\n" for line in traces[name]), encoding="utf-8")
        reports.append(report)
    write_manifest(out_dir)
    return reports


def save_models(models: Models, out_dir, seed: int) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"prior": out_dir / f"prior_seed{seed}.bpn",
             "ensemble": out_dir / f"ensemble_seed{seed}.bpq"}
    models.prior.save(paths["prior"])
    models.ensemble.save(paths["ensemble"])
    return paths


def load_models(models_dir, seed: int) -> Models:
    d = Path(models_dir)
    return Models(PriorModel.load(d / f"prior_seed{seed}.bpn"),
                  QEnsemble.load(d / f"ensemble_seed{seed}.bpq"))


def run_ablation(config, out_dir, seeds=None) -> dict:
    """Score-term switches and modality dropout at the fixed budget K_fixed.

    Modality settings retrain the prior and ensemble on masked features.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with stage("load-data"):
        train, test = load_datasets(cfg)
    result = {}
    for seed in seeds if seeds is not None else cfg.experiment.seeds:
        models = train_models(cfg, train, seed)
        score_rows = {}
        for label, change in SCORE_VARIANTS.items():
            pcfg = dataclasses.replace(cfg.policy, **change)
            res = evaluate_policies(cfg, test, models, seed, ["ours_fixed"], pcfg)
            score_rows[label] = res["ours_fixed"][0]
        modality_rows = {}
        for label, mask in MODALITY_SETTINGS.items():
            with stage(f"mask-{label}"):
                tr_m, te_m = mask_modalities(train, mask), mask_modalities(test, mask)
            m = models if all(mask) else train_models(cfg, tr_m, seed)
            res = evaluate_policies(cfg, te_m, m, seed, ["ours_fixed", "ours_adaptive"])
            modality_rows[label] = {"fixed": res["ours_fixed"][0],
                                    "adaptive": res["ours_adaptive"][0]}
        entry = {"meta": _meta(cfg, train, test, seed), "score_terms": score_rows,
                 "modality_dropout": modality_rows}
        sdir = out_dir / f"seed_{seed}"
        sdir.mkdir(exist_ok=True)
        with stage("write-report"):
            write_json(sdir / "ablation.json", entry)
            write_bars(sdir / "score_terms.csv", score_rows)
            write_bars(sdir / "modality_fixed.csv",
                       {k: v["fixed"] for k, v in modality_rows.items()})
            write_bars(sdir / "modality_adaptive.csv",
                       {k: v["adaptive"] for k, v in modality_rows.items()})
        result[seed] = entry
    write_manifest(out_dir)
    return result


def run_codebook_sweep(config, out_dir, seeds=None) -> dict:
    """Uniform sub-codebooks of the full codebook, models retrained per size."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with stage("load-data"):
        train, test = load_datasets(cfg)
    result = {}
    for seed in seeds if seeds is not None else cfg.experiment.seeds:
        rows = {}
        for b_used in cfg.sweep.codebook_sizes:
            with stage(f"subcodebook-{b_used}"):
                tr_b, te_b = subcodebook(train, b_used), subcodebook(test, b_used)
                pcfg = cfg.policy
                if pcfg.K_max > b_used:
                    raise ConfigError(f"K_max={pcfg.K_max} exceeds sub-codebook size {b_used}")
            models = train_models(cfg, tr_b, seed)
            res = evaluate_policies(cfg, te_b, models, seed, cfg.sweep.policies)
            for name, (m, _) in res.items():
                rows[f"B{b_used}_{name}"] = dict(m, B_used=b_used, policy=name)
        entry = {"meta": _meta(cfg, train, test, seed), "rows": rows}
        sdir = out_dir / f"seed_{seed}"
        sdir.mkdir(exist_ok=True)
        with stage("write-report"):
            write_json(sdir / "codebook_sweep.json", entry)
            write_bars(sdir / "codebook_sweep.csv", rows)
        result[seed] = entry
    write_manifest(out_dir)
    return result


__all__ = [
    "ExperimentConfig", "MODALITIES", "MODALITY_SETTINGS", "SCORE_VARIANTS", "StageError",
    "compute_metrics", "evaluate_policies", "load_datasets", "load_models", "run_ablation",
    "run_codebook_sweep", "run_experiment", "save_models", "snr_cdf_export", "snr_cdf_rows",
    "train_models",
]
