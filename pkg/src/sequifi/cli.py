"""Command line: gen-synth, extract, run, report.

A run is fully reproducible from its config snapshot and seed: all
randomness is derived from the experiment seed through named substreams, and
aggregated result files are byte-identical across repeated executions.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .continual import StrategyConfig
from .corpus import EmotionLabel, SynthSpec, gen_synth, load_manifest, save_manifest, write_features_csv
from .errors import ConfigError, FeatureError, SequifiError
from .evalkit import (
    aggregate_folds,
    make_fold_plan,
    matrix_to_csv,
    matrix_to_markdown,
    run_chain_fold,
    stage_labels,
)
from .features import MfccConfig, extract_utterance, read_wav
from .netcore.checkpoint import save_checkpoint
from .netcore.training import TrainConfig
from .reporting import STRATEGY_DISPLAY, ComparisonRow, render_comparison_csv, render_comparison_markdown
from .rng import derive_seed

log = logging.getLogger("sequifi")

_LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level_name = os.environ.get("SEQUIFI_LOG", "info").lower()
    if level_name not in _LOG_LEVELS:
        raise ConfigError(f"SEQUIFI_LOG must be one of {sorted(_LOG_LEVELS)}, got {level_name!r}")
    logging.basicConfig(level=_LOG_LEVELS[level_name], format="%(levelname)s %(message)s")


@dataclass(frozen=True)
class ExperimentConfig:
    chain: tuple[str, ...]
    feature: dict
    strategy: StrategyConfig
    training: TrainConfig
    folds: int
    output_dir: str
    seed: int

    def to_dict(self) -> dict:
        strat = {
            "tag": self.strategy.tag,
            "epochs_total": self.strategy.epochs_total,
            "sequifi_epochs_per_class": self.strategy.sequifi_epochs_per_class,
            "ewc_lambda": self.strategy.ewc_lambda,
            "fisher_samples": self.strategy.fisher_samples,
            "wa_alpha": self.strategy.wa_alpha,
            "replay_fraction": self.strategy.replay_fraction,
            "seed": self.strategy.seed,
        }
        if self.strategy.class_order is not None:
            strat["class_order"] = [lab.as_string for lab in self.strategy.class_order]
        train = {
            "learning_rate": self.training.learning_rate,
            "batch_size": self.training.batch_size,
            "epochs": self.training.epochs,
            "l2_lambda": self.training.l2_lambda,
            "dropout_rate": self.training.dropout_rate,
            "l2_on_recurrent": self.training.l2_on_recurrent,
            "seed": self.training.seed,
        }
        return {
            "chain": list(self.chain),
            "feature": dict(self.feature),
            "strategy": strat,
            "training": train,
            "folds": self.folds,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def strategy_from_dict(doc: dict) -> StrategyConfig:
    if "tag" not in doc:
        raise ConfigError("strategy config needs a 'tag'")
    kwargs = dict(doc)
    order = kwargs.pop("class_order", None)
    if order is not None:
        kwargs["class_order"] = tuple(EmotionLabel.from_string(s) for s in order)
    try:
        return StrategyConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid strategy config: {exc}") from exc


def training_from_dict(doc: dict) -> TrainConfig:
    try:
        return TrainConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid training config: {exc}") from exc


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return experiment_config_from_dict(doc, base_dir=path.parent)


def experiment_config_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    for key in ("chain", "strategy", "training", "output_dir", "seed"):
        if key not in doc:
            raise ConfigError(f"experiment config missing key {key!r}")
    chain = []
    for entry in doc["chain"]:
        p = Path(entry)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"chain manifest not found: {p}")
        chain.append(str(p))
    if not chain:
        raise ConfigError("chain must list at least one manifest")
    feature = doc.get("feature", {"kind": "precomputed", "tag": "precomputed"})
    if feature.get("kind") not in ("precomputed", "mfcc"):
        raise ConfigError("feature.kind must be 'precomputed' or 'mfcc'")
    feature.setdefault("tag", "MFCC" if feature["kind"] == "mfcc" else "precomputed")
    folds = int(doc.get("folds", 5))
    if folds < 1:
        raise ConfigError("folds must be positive")
    return ExperimentConfig(
        chain=tuple(chain),
        feature=feature,
        strategy=strategy_from_dict(doc["strategy"]),
        training=training_from_dict(doc["training"]),
        folds=folds,
        output_dir=str(doc["output_dir"]),
        seed=int(doc["seed"]),
    )


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------- gen-synth


def cmd_gen_synth(spec_path, out_dir) -> int:
    spec_path = Path(spec_path)
    try:
        doc = json.loads(spec_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse synth spec {spec_path}: {exc}") from exc
    try:
        spec = SynthSpec(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth spec: {exc}") from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for manifest in gen_synth(spec):
        json_path = out / f"{manifest.name}.manifest.json"
        save_manifest(manifest, json_path)
        log.info("wrote %s (%d samples)", json_path, len(manifest.samples))
    return 0


# ------------------------------------------------------------------ extract


def cmd_extract(manifest_path, out_csv=None, mfcc_config_path=None) -> int:
    manifest_path = Path(manifest_path)
    cfg = MfccConfig()
    if mfcc_config_path is not None:
        try:
            doc = json.loads(Path(mfcc_config_path).read_text(encoding="utf-8"))
            cfg = MfccConfig(**doc)
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid MFCC config: {exc}") from exc

    manifest = load_manifest(manifest_path)
    vectors = {}
    for sample in manifest.samples:
        if sample.wav is None:
            raise FeatureError(f"sample {sample.id!r} has no WAV reference")
        wav_path = manifest_path.parent / sample.wav
        try:
            signal, rate = read_wav(wav_path)
            vectors[sample.id] = extract_utterance(signal, rate, cfg)
        except (FeatureError, ValueError) as exc:
            raise FeatureError(f"sample {sample.id!r}: {exc}") from exc

    if out_csv:
        csv_path = Path(out_csv)
    else:
        csv_path = manifest_path.parent / (manifest_path.name.removesuffix(".json") + ".features.csv")
    dim = cfg.num_ceps
    tmp_path = csv_path.with_name(csv_path.name + ".tmp")
    write_features_csv(tmp_path, vectors, dim)
    os.replace(tmp_path, csv_path)

    manifest.feature_dim = dim
    for sample in manifest.samples:
        sample.features = vectors[sample.id]
    save_manifest(manifest, manifest_path, features_csv=os.path.relpath(csv_path, manifest_path.parent))
    log.info("extracted %d utterances -> %s", len(vectors), csv_path)
    return 0


# ---------------------------------------------------------------------- run


@dataclass
class RunRecord:
    """Everything needed to reconstruct and audit one run."""

    config: ExperimentConfig
    config_hash: str
    status: str
    output_dir: Path
    chain: list[str]
    stage_labels: list[str]
    timings: dict
    results_csv: Path | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "config_hash": self.config_hash,
            "chain": self.chain,
            "stage_labels": self.stage_labels,
            "folds": self.config.folds,
            "strategy": self.config.strategy.tag,
            "feature_tag": self.config.feature["tag"],
            "timings": self.timings,
        }


def _fold_worker(args):
    manifests, strategy, net_cfg, order, fold_index = args
    return run_chain_fold(manifests, strategy, net_cfg, order, fold_index)


def _save_stage_artifact(fold_dir: Path, stage: int, artifact) -> None:
    from .continual import FisherInfo, ReplayBuffer

    if isinstance(artifact, FisherInfo):
        with open(fold_dir / f"stage{stage}_fisher.npz", "wb") as handle:
            np.savez(handle, **{f"fisher:{k}": v for k, v in artifact.values.items()})
    elif isinstance(artifact, ReplayBuffer):
        doc = {
            "ids": [s.id for s in artifact.samples],
            "counts": {
                f"{name}/{label.as_string}": count
                for (name, label), count in artifact.counts.items()
            },
        }
        fold_dir.joinpath(f"stage{stage}_buffer.json").write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8"
        )


def _stage_log_to_dict(stage_log) -> dict:
    return {
        "strategy": stage_log.strategy,
        "epoch_units": stage_log.epoch_units,
        "phases": [
            {
                "name": phase.name,
                "epochs": [
                    {
                        "index": e.index,
                        "mean_loss": e.mean_loss,
                        "batch_sizes": e.batch_sizes,
                        "batch_label_sets": [list(s) for s in e.batch_label_sets],
                    }
                    for e in phase.train_log.epochs
                ],
            }
            for phase in stage_log.phases
        ],
    }


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> RunRecord:
    """Execute the chain across all folds and persist every artifact."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()

    manifests = [load_manifest(p) for p in config.chain]
    plan = make_fold_plan(derive_seed(config.seed, "plan"), num_folds=config.folds)
    net_cfg = replace(config.training, seed=config.seed)

    tasks = [
        (manifests, config.strategy, net_cfg, plan.folds[f], f) for f in range(config.folds)
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_fold_worker, tasks))
    else:
        outcomes = [_fold_worker(t) for t in tasks]

    per_fold = []
    for f, (matrix, fold_stage_logs, snapshots, artifacts) in enumerate(outcomes):
        per_fold.append(matrix)
        fold_dir = out / f"fold{f}"
        fold_dir.mkdir(exist_ok=True)
        for s, params in enumerate(snapshots):
            save_checkpoint(fold_dir / f"stage{s}.npz", params)
            _save_stage_artifact(fold_dir, s, artifacts[s])
        fold_dir.joinpath("train_log.json").write_text(
            json.dumps([_stage_log_to_dict(sl) for sl in fold_stage_logs], indent=2) + "\n",
            encoding="utf-8",
        )
        log.info("fold %d complete (%d stages)", f, len(snapshots))

    aggregated = aggregate_folds(per_fold)
    results_csv = out / "results.csv"
    results_csv.write_text(matrix_to_csv(aggregated), encoding="utf-8")
    label = f"{STRATEGY_DISPLAY[config.strategy.tag]} ({config.feature['tag']})"
    (out / "results.md").write_text(
        matrix_to_markdown(aggregated, model_label=label), encoding="utf-8"
    )

    record = RunRecord(
        config=config,
        config_hash=config_hash(config),
        status="complete",
        output_dir=out,
        chain=[m.name for m in manifests],
        stage_labels=stage_labels([m.name for m in manifests]),
        timings={"total_seconds": time.monotonic() - started},
        results_csv=results_csv,
    )
    (out / "run.json").write_text(json.dumps(record.to_dict(), indent=2) + "\n", encoding="utf-8")
    return record


def cmd_run(config_path, seed_override=None, out_override=None, jobs=1) -> int:
    config = load_experiment_config(config_path)
    if seed_override is not None:
        config = replace(config, seed=int(seed_override))
    if out_override is not None:
        config = replace(config, output_dir=str(out_override))

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    try:
        record = run_experiment(config, jobs=jobs)
    except (SequifiError, ValueError, OSError) as exc:
        (out / "error.json").write_text(
            json.dumps(
                {"status": "failed", "config_hash": config_hash(config), "error": str(exc)},
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
        log.error("run failed: %s", exc)
        return 1
    log.info(
        "run complete in %.1fs -> %s", record.timings["total_seconds"], record.results_csv
    )
    return 0


# ------------------------------------------------------------------- report


def _rows_from_run_dir(run_dir: Path) -> tuple[list[ComparisonRow], list[str], dict]:
    run_doc = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    if run_doc.get("status") != "complete":
        raise ConfigError(f"{run_dir}: run did not complete")
    csv_lines = (run_dir / "results.csv").read_text(encoding="utf-8").splitlines()
    header = csv_lines[0].split(",")
    expected = ["stage", "dataset", "seen", "fold", "accuracy", "macro_f1"]
    if header != expected:
        raise ConfigError(f"{run_dir}: unexpected results.csv header")

    chain = run_doc["chain"]
    labels = run_doc["stage_labels"]
    strategy = STRATEGY_DISPLAY[run_doc["strategy"]]
    feature = run_doc["feature_tag"]

    cells: dict[tuple[str, str], tuple[float, float, bool]] = {}
    for line in csv_lines[1:]:
        stage, dataset, seen, fold, acc, f1 = line.split(",")
        if fold != "mean":
            continue
        cells[(stage, dataset)] = (100 * float(acc), 100 * float(f1), seen == "true")

    rows = []
    for s, stage in enumerate(labels):
        acc = tuple(cells[(stage, d)][0] for d in chain)
        f1 = tuple(cells[(stage, d)][1] for d in chain)
        seen = tuple(cells[(stage, d)][2] for d in chain)
        rows.append(
            ComparisonRow(
                stage=stage,
                strategy="IM" if s == 0 else strategy,
                feature=feature,
                accuracy=acc,
                macro_f1=f1,
                seen=seen,
            )
        )
    return rows, chain, run_doc


def cmd_report(run_dirs, out_dir) -> int:
    all_rows: list[ComparisonRow] = []
    chain = None
    hashes: dict[str, str] = {}
    seen_im: set[str] = set()
    for entry in run_dirs:
        run_dir = Path(entry)
        rows, this_chain, run_doc = _rows_from_run_dir(run_dir)
        if chain is None:
            chain = this_chain
        elif this_chain != chain:
            raise ConfigError(
                f"{run_dir}: chain {this_chain} does not match {chain}; "
                "reports need runs over the same chain"
            )
        hashes[f"{rows[1].strategy if len(rows) > 1 else rows[0].strategy} "
               f"({run_doc['feature_tag']})"] = run_doc["config_hash"]
        for row in rows:
            if row.strategy == "IM":
                if row.feature in seen_im:
                    continue
                seen_im.add(row.feature)
            all_rows.append(row)

    # stage-major ordering so strategies appear side by side within a stage
    stage_order = list(dict.fromkeys(r.stage for r in all_rows))
    all_rows.sort(key=lambda r: stage_order.index(r.stage))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datasets = tuple(chain)
    (out / "report.md").write_text(
        render_comparison_markdown(all_rows, datasets, config_hashes=hashes), encoding="utf-8"
    )
    (out / "report.csv").write_text(render_comparison_csv(all_rows, datasets), encoding="utf-8")
    log.info("report written to %s", out)
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sequifi",
        description="Continual-learning experiments for emotion classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen-synth", help="generate a synthetic shift corpus")
    p_gen.add_argument("--spec", required=True, help="SynthSpec JSON file")
    p_gen.add_argument("--out", required=True, help="output directory")

    p_ext = sub.add_parser("extract", help="extract MFCC features for a WAV manifest")
    p_ext.add_argument("--manifest", required=True)
    p_ext.add_argument("--out", default=None, help="features CSV path")
    p_ext.add_argument("--mfcc-config", default=None, help="MfccConfig JSON file")

    p_run = sub.add_parser("run", help="run a chained continual-learning experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="fold worker processes")

    p_rep = sub.add_parser("report", help="compare completed runs")
    p_rep.add_argument("run_dirs", nargs="+", help="run output directories, one per strategy")
    p_rep.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.command == "gen-synth":
            return cmd_gen_synth(args.spec, args.out)
        if args.command == "extract":
            return cmd_extract(args.manifest, args.out, args.mfcc_config)
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.out, args.jobs)
        if args.command == "report":
            return cmd_report(args.run_dirs, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (SequifiError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
