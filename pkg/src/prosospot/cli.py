"""Operator entry points: synth, train, eval, sweep, embed, features, ablate.

Every command resolves a RunConfig (JSON file plus flag overrides),
writes its outputs into one directory together with the resolved config
snapshot, and removes whatever it managed to write if it fails part way.
Relative output directories land under $PROSOSPOT_OUT when that is set.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import dsp
from .encoders import PhonemeStreamConfig, ProsodyStreamConfig
from .evaluation import (export_embeddings, interpolation_sweep,
                         run_ablation, run_benchmark)
from .model import (ABLATIONS, Spotter, SpotterConfig, save_checkpoint)
from .synthdata import (CorpusConfig, build_corpus, load_manifest,
                        write_corpus)
from .train import TrainConfig, train_spotter, write_training_log

OUTPUT_ROOT_ENV = "PROSOSPOT_OUT"
SNAPSHOT_NAME = "run_config.json"


class ConfigError(ValueError):
    """A run configuration failed schema validation or construction."""


# ---------------------------------------------------------------------------
# RunConfig


@dataclass(frozen=True)
class RunConfig:
    """Everything one pipeline run needs, resolvable to sub-configs."""
    master_seed: int = 0
    ablation: str = "none"
    output_dir: str = "run"
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: SpotterConfig = field(default_factory=SpotterConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth_workers: int = 1

    def resolved_model(self) -> SpotterConfig:
        return dataclasses.replace(self.model, init_seed=self.master_seed,
                                   ablation=self.ablation)

    def resolved_train(self) -> TrainConfig:
        return dataclasses.replace(self.train, shuffle_seed=self.master_seed)

    def to_dict(self) -> dict:
        out = {
            "master_seed": self.master_seed,
            "ablation": self.ablation,
            "output_dir": self.output_dir,
            "synth_workers": self.synth_workers,
            "corpus": dataclasses.asdict(self.corpus),
            "train": dataclasses.asdict(self.train),
            "model": {
                "fusion_heads": self.model.fusion_heads,
                "decision_hidden": self.model.decision_hidden,
                "phoneme": dataclasses.asdict(self.model.phoneme),
                "prosody": dataclasses.asdict(self.model.prosody),
            },
        }
        out["train"].pop("shuffle_seed", None)
        return out


def _integer(minimum=None):
    spec = {"type": "integer"}
    if minimum is not None:
        spec["minimum"] = minimum
    return spec


def _number(minimum=None):
    spec = {"type": "number"}
    if minimum is not None:
        spec["minimum"] = minimum
    return spec


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "master_seed": _integer(0),
        "ablation": {"enum": list(ABLATIONS)},
        "output_dir": {"type": "string", "minLength": 1},
        "synth_workers": _integer(1),
        "corpus": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "master_seed": _integer(0),
                "n_keywords": _integer(2),
                "n_speakers": _integer(6),
                "n_hard_per_keyword": _integer(1),
                "n_easy_per_keyword": _integer(1),
                "n_train_trials": _integer(2),
                "n_dev_trials": _integer(2),
                "n_test_easy": _integer(2),
                "n_test_hard": _integer(2),
                "n_test_intent": _integer(2),
                "n_test_accent": _integer(2),
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "fusion_heads": _integer(1),
                "decision_hidden": _integer(1),
                "phoneme": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "d_model": _integer(1),
                        "n_blocks": _integer(1),
                        "n_heads": _integer(1),
                        "conv_kernel": _integer(1),
                        "ff_expansion": _integer(1),
                        "max_frames": _integer(1),
                    },
                },
                "prosody": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "d_in": _integer(1),
                        "hidden": _integer(1),
                        "layers": _integer(1),
                    },
                },
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": _integer(1),
                "batch_size": _integer(2),
                "peak_lr": _number(0.0),
                "warmup_epochs": _integer(0),
                "weight_decay": _number(0.0),
                "clip_norm": _number(0.0),
                "lam": _number(0.0),
                "tau": _number(0.0),
            },
        },
    },
}


def _schema_path(error) -> str:
    parts = ["$"]
    for step in error.absolute_path:
        parts.append(f"[{step}]" if isinstance(step, int) else f".{step}")
    return "".join(parts)


def validate_config_dict(raw: dict) -> None:
    """Schema-check a raw config mapping; report every violation by path."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw),
                    key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_schema_path(e)}: {e.message}" for e in errors]
        raise ConfigError("invalid run config:\n  " + "\n  ".join(lines))


def config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON mapping."""
    if not isinstance(raw, dict):
        raise ConfigError(
            f"run config must be a JSON object, got {type(raw).__name__}")
    validate_config_dict(raw)
    model_raw = dict(raw.get("model", {}))
    phoneme = PhonemeStreamConfig(**model_raw.pop("phoneme", {}))
    prosody = ProsodyStreamConfig(**model_raw.pop("prosody", {}))
    try:
        model = SpotterConfig(phoneme=phoneme, prosody=prosody, **model_raw)
        return RunConfig(
            master_seed=raw.get("master_seed", 0),
            ablation=raw.get("ablation", "none"),
            output_dir=raw.get("output_dir", "run"),
            synth_workers=raw.get("synth_workers", 1),
            corpus=CorpusConfig(**raw.get("corpus", {})),
            model=model,
            train=TrainConfig(**raw.get("train", {})),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: "
                          f"{exc}") from None
    return config_from_dict(raw)


def apply_overrides(config: RunConfig, seed=None, ablation=None,
                    out=None) -> RunConfig:
    """Flag overrides beat config-file fields."""
    if seed is not None:
        config = dataclasses.replace(config, master_seed=seed)
    if ablation is not None:
        config = dataclasses.replace(config, ablation=ablation)
    if out is not None:
        config = dataclasses.replace(config, output_dir=str(out))
    return config


# ---------------------------------------------------------------------------
# Output-directory lifecycle


def resolve_output_dir(path) -> Path:
    path = Path(path)
    if path.is_absolute():
        return path
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return (Path(root) / path) if root else path


class OutputSession:
    """Tracks one command's output files so failures leave no partials.

    Used as a context manager: leaving the block on an exception discards
    everything the command wrote so far (and the directory itself when
    this session created it).
    """

    def __init__(self, out_dir):
        self.dir = resolve_output_dir(out_dir)
        self._made_dir = not self.dir.exists()
        self.dir.mkdir(parents=True, exist_ok=True)
        self.targets: list = []

    def __enter__(self) -> "OutputSession":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            self.discard()
        return False

    def path(self, name: str) -> Path:
        target = self.dir / name
        self.targets.append(target)
        return target

    def write_snapshot(self, payload: dict) -> Path:
        target = self.path(SNAPSHOT_NAME)
        with open(target, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        return target

    def adopt(self, *names: str) -> None:
        """Register files some helper already wrote under the directory."""
        for name in names:
            self.targets.append(self.dir / name)

    def discard(self) -> None:
        for target in self.targets:
            if target.is_dir():
                shutil.rmtree(target, ignore_errors=True)
            elif target.exists():
                target.unlink()
        if self._made_dir:
            shutil.rmtree(self.dir, ignore_errors=True)

    def missing(self) -> list:
        return [t for t in self.targets if not t.exists()]


def _snapshot(config: RunConfig, command: str, **extra) -> dict:
    payload = {"command": command, "config": config.to_dict()}
    payload.update(extra)
    return payload


def _invocation_snapshot(command: str, **fields) -> dict:
    return {"command": command,
            **{k: (str(v) if isinstance(v, Path) else v)
               for k, v in fields.items()}}


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(config: RunConfig, out_dir=None) -> OutputSession:
    """Render the configured corpus to wavs plus manifest."""
    with OutputSession(out_dir or config.output_dir) as session:
        session.adopt("manifest.jsonl", "config.json", "wavs")
        corpus = build_corpus(config.corpus)
        write_corpus(corpus, session.dir, workers=config.synth_workers)
        session.write_snapshot(_snapshot(config, "synth"))
    return session


def cmd_train(config: RunConfig, out_dir=None, on_step=None) -> OutputSession:
    """Train one spotter from scratch; write checkpoint and log."""
    with OutputSession(out_dir or config.output_dir) as session:
        corpus = build_corpus(config.corpus)
        model = Spotter(config.resolved_model())
        result = train_spotter(model, corpus, config.resolved_train(),
                               on_step=on_step)
        meta = {"trained": 1.0, "epochs": float(config.train.epochs),
                "steps": float(result.steps)}
        save_checkpoint(session.path("checkpoint.pspot"), model,
                        stats=result.stats, meta=meta)
        write_training_log(session.path("training_log.csv"), result.history)
        session.write_snapshot(_snapshot(config, "train"))
    return session


def cmd_eval(checkpoint, manifest, out_dir, batch_size: int = 16,
             scorer=None) -> OutputSession:
    """Score a manifest and write report.json/report.csv plus figures."""
    with OutputSession(out_dir) as session:
        splits = sorted({r["split"] for r in load_manifest(manifest)})
        session.adopt("report.json", "report.csv", "roc.png",
                      *(f"scores_{split}.png" for split in splits))
        run_benchmark(manifest, session.dir, checkpoint=checkpoint,
                      scorer=scorer, batch_size=batch_size)
        session.write_snapshot(_invocation_snapshot(
            "eval", checkpoint=checkpoint if scorer is None else None,
            scorer="stub" if scorer is not None else None,
            manifest=manifest, batch_size=batch_size))
    return session


def cmd_sweep(checkpoint, manifest, enroll: int, query_pos: int,
              query_neg: int, out_dir) -> OutputSession:
    """Interpolate enrollment-to-negative signatures; write sweep.csv."""
    with OutputSession(out_dir) as session:
        result = interpolation_sweep(checkpoint, manifest, enroll, query_pos,
                                     query_neg,
                                     out_path=session.path("sweep.csv"))
        from . import plots
        plots.sweep_curve(result.alphas, result.scores,
                          session.path("sweep.png"), rho=result.spearman_rho)
        session.write_snapshot(_invocation_snapshot(
            "sweep", checkpoint=checkpoint, manifest=manifest, enroll=enroll,
            query_pos=query_pos, query_neg=query_neg,
            spearman_rho=result.spearman_rho))
    return session


def cmd_embed(checkpoint, manifest, out_dir, split=None) -> OutputSession:
    """Export prosody signatures with PCA coordinates and a scatter."""
    with OutputSession(out_dir) as session:
        export_embeddings(checkpoint, manifest,
                          out_csv=session.path("embeddings.csv"),
                          out_png=session.path("embeddings.png"), split=split)
        session.write_snapshot(_invocation_snapshot(
            "embed", checkpoint=checkpoint, manifest=manifest, split=split))
    return session


def cmd_features(wav_path, out_dir) -> OutputSession:
    """Dump filterbank and prosody tracks of one wav as CSV files."""
    with OutputSession(out_dir) as session:
        wav = dsp.read_wav(wav_path)
        fbank = dsp.compute_fbank(wav)
        track = dsp.compute_prosody(wav)
        with open(session.path("fbank.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame"] + [f"mel{k:02d}" for k in
                                         range(fbank.values.shape[1])])
            for t, row in enumerate(fbank.values):
                writer.writerow([t] + [f"{v:.6g}" for v in row])
        with open(session.path("prosody.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "f0_hz", "aperiodicity", "energy"])
            for t, row in enumerate(track.values):
                writer.writerow([t] + [f"{v:.6g}" for v in row])
        from . import plots
        plots.feature_panel(fbank.values, track.values,
                            session.path("features.png"))
        session.write_snapshot(_invocation_snapshot(
            "features", wav=str(wav_path)))
    return session


def cmd_ablate(config: RunConfig, out_dir=None, on_step=None) -> OutputSession:
    """Train all ablation variants with one seed; write the comparison."""
    with OutputSession(out_dir or config.output_dir) as session:
        corpus = build_corpus(config.corpus)
        run_ablation(corpus, config.resolved_train(),
                     init_seed=config.master_seed,
                     model_config=config.model,
                     out_path=session.path("ablation.json"), on_step=on_step)
        session.write_snapshot(_snapshot(config, "ablate"))
    return session


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prosospot",
        description="Prosody-aware keyword spotting pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config):
        p.add_argument("--config", type=Path, required=needs_config,
                       help="RunConfig JSON file")
        p.add_argument("--seed", type=int, default=None,
                       help="override master_seed")
        p.add_argument("--ablation", choices=[a for a in ABLATIONS
                                              if a != "none"],
                       default=None, help="disable one model component")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory")

    p = sub.add_parser("synth", help="render the synthetic corpus")
    common(p, needs_config=False)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel render threads")

    p = sub.add_parser("train", help="train a spotter checkpoint")
    common(p, needs_config=False)

    p = sub.add_parser("eval", help="score a manifest with a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--batch-size", type=int, default=16)

    p = sub.add_parser("sweep", help="signature interpolation sweep")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--enroll", type=int, required=True)
    p.add_argument("--query-pos", type=int, required=True)
    p.add_argument("--query-neg", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("embed", help="export prosody signatures + PCA")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", type=str, default=None)

    p = sub.add_parser("features", help="dump features of one wav")
    p.add_argument("--wav", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("ablate", help="train and compare all ablations")
    common(p, needs_config=False)
    return parser


def _config_for(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(config, seed=args.seed, ablation=args.ablation,
                           out=args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    session = None
    try:
        if args.command == "synth":
            config = _config_for(args)
            if args.workers is not None:
                config = dataclasses.replace(config,
                                             synth_workers=args.workers)
            session = cmd_synth(config)
        elif args.command == "train":
            session = cmd_train(_config_for(args))
        elif args.command == "eval":
            session = cmd_eval(args.checkpoint, args.manifest, args.out,
                               batch_size=args.batch_size)
        elif args.command == "sweep":
            session = cmd_sweep(args.checkpoint, args.manifest, args.enroll,
                                args.query_pos, args.query_neg, args.out)
        elif args.command == "embed":
            session = cmd_embed(args.checkpoint, args.manifest, args.out,
                                split=args.split)
        elif args.command == "features":
            session = cmd_features(args.wav, args.out)
        elif args.command == "ablate":
            session = cmd_ablate(_config_for(args))
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    missing = session.missing()
    if missing:
        names = ", ".join(str(m) for m in missing)
        print(f"error: expected outputs were not written: {names}",
              file=sys.stderr)
        session.discard()
        return 1
    print(f"wrote {len(session.targets)} outputs to {session.dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
