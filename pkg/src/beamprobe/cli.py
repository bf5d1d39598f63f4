"""Command line entry point: ``beamprobe <subcommand> --config --seed --out``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import BeamProbeError
from .evalharness import (ExperimentConfig, load_datasets, run_ablation,
                          run_codebook_sweep, run_experiment, save_models, stage,
                          train_models, write_json, write_manifest)
from .synth import export_dataset


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="beamprobe", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("generate", "generate (or import) the dataset and export CSVs"),
        ("train", "train prior and Q-ensemble checkpoints"),
        ("eval", "train and evaluate the configured policies"),
        ("ablate", "score-term and modality-dropout ablations"),
        ("sweep-codebook", "uniform sub-codebook sweep"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, default=None, help="TOML experiment config")
        p.add_argument("--seed", type=int, action="append", default=None,
                       help="run seed (repeatable); overrides experiment.seeds")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config key")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument("--models", type=Path, default=None,
                           help="directory with checkpoints written by 'train'")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with stage("config"):
            overrides = list(args.overrides)
            if args.seed:
                overrides.append(f"experiment.seeds={json.dumps(args.seed)}")
            cfg = ExperimentConfig.load(args.config, overrides)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "config.resolved.json", cfg.to_dict())
        if args.command == "generate":
            with stage("load-data"):
                train, test = load_datasets(cfg)
            with stage("export"):
                export_dataset(train, out, "train")
                export_dataset(test, out, "test")
            write_manifest(out)
        elif args.command == "train":
            with stage("load-data"):
                train, _ = load_datasets(cfg)
            for seed in cfg.experiment.seeds:
                models = train_models(cfg, train, seed)
                with stage("save-models"):
                    save_models(models, out, seed)
            write_manifest(out)
        elif args.command == "eval":
            reports = run_experiment(cfg, out, models_dir=args.models)
            for rep in reports:
                for name, m in rep["policies"].items():
                    print(f"seed={rep['meta']['run_seed']} {name:14s} top1={m['top1']:.3f} "
                          f"top3={m['top3']:.3f} E[K]={m['mean_K']:.2f} "
                          f"snr={m['snr_mean']:.2f} p05={m['snr_p05']:.2f} "
                          f"outage={m['outage_rate']:.3f} shield={m['shield_rate']:.3f}")
        elif args.command == "ablate":
            run_ablation(cfg, out)
        elif args.command == "sweep-codebook":
            run_codebook_sweep(cfg, out)
    except BeamProbeError as exc:
        print(f"beamprobe {args.command}: error {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
