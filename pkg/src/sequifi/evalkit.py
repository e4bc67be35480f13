"""Metrics, class-order fold planning, and the chained multi-dataset protocol.

A chain evaluation trains an initial model on the first corpus, then adapts
stage by stage through the remaining corpora with one strategy, evaluating
every stage's model on every corpus's test split. Cells on corpora not yet
trained on are zero-shot. Results are averaged over five class-order folds.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .continual import (
    PhaseLog,
    StageLog,
    StrategyConfig,
    build_replay_buffer,
    estimate_fisher,
    ewc_finetune,
    replay_finetune,
    sequifi_finetune,
    vanilla_finetune,
    weight_avg_finetune,
)
from .corpus import LABELS, TEST, TRAIN, DatasetManifest, EmotionLabel
from .errors import ConfigError
from .netcore.params import Architecture, NetworkParams, init_params
from .netcore.training import predict_samples, train
from .rng import derive_seed, substream

NUM_CLASSES = len(LABELS)


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray  # (4, 4) counts, rows true, cols predicted


def compute_metrics(true_labels, predicted_labels) -> Metrics:
    """Accuracy, macro-averaged F1 (all four classes, zero on empty), confusion."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError("true and predicted labels must be 1-D and the same length")
    if t.size == 0:
        raise ValueError("cannot compute metrics on empty inputs")
    if t.min() < 0 or t.max() >= NUM_CLASSES or p.min() < 0 or p.max() >= NUM_CLASSES:
        raise ValueError(f"labels must lie in 0..{NUM_CLASSES - 1}")

    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (t, p), 1)
    accuracy = float(np.trace(confusion) / confusion.sum())

    f1s = []
    for c in range(NUM_CLASSES):
        tp = confusion[c, c]
        col = confusion[:, c].sum()
        row = confusion[c, :].sum()
        precision = tp / col if col > 0 else 0.0
        recall = tp / row if row > 0 else 0.0
        f1s.append(2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0)
    return Metrics(accuracy=accuracy, macro_f1=float(np.mean(f1s)), confusion=confusion)


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple, ...]
    seed: int


def make_fold_plan(seed: int, num_labels: int = 4, num_folds: int = 5) -> FoldPlan:
    """Sample ``num_folds`` pairwise-distinct label permutations, seeded."""
    perms = list(itertools.permutations(range(num_labels)))
    if num_folds > len(perms):
        raise ConfigError(
            f"cannot draw {num_folds} distinct class orders from {len(perms)} "
            f"permutations of {num_labels} labels"
        )
    picks = substream(seed, "folds").choice(len(perms), size=num_folds, replace=False)
    if num_labels == len(LABELS):
        folds = tuple(tuple(EmotionLabel(c) for c in perms[i]) for i in picks)
    else:
        folds = tuple(perms[i] for i in picks)
    return FoldPlan(folds=folds, seed=seed)


@dataclass
class EvalMatrix:
    dataset_names: tuple[str, ...]
    per_fold: list[list[list[Metrics]]]  # [fold][stage][dataset]
    mean: list[list[Metrics]]  # [stage][dataset]
    seen: list[list[bool]]  # [stage][dataset], lower-triangular on the chain

    @property
    def num_stages(self) -> int:
        return len(self.dataset_names)

    @property
    def num_folds(self) -> int:
        return len(self.per_fold)


def stage_labels(dataset_names) -> list[str]:
    """Cumulative seen-dataset labels, e.g. C, C+R, C+R+E for distinct initials."""
    initials = [name[:1].upper() for name in dataset_names]
    codes = initials if len(set(initials)) == len(initials) else list(dataset_names)
    return ["+".join(codes[: i + 1]) for i in range(len(codes))]


def _mean_metrics(cells: list[Metrics]) -> Metrics:
    return Metrics(
        accuracy=float(np.mean([c.accuracy for c in cells])),
        macro_f1=float(np.mean([c.macro_f1 for c in cells])),
        confusion=np.sum([c.confusion for c in cells], axis=0),
    )


def aggregate_folds(per_fold: list[EvalMatrix]) -> EvalMatrix:
    """Cellwise mean of accuracy and macro-F1 across folds; confusions summed."""
    if not per_fold:
        raise ValueError("no fold results to aggregate")
    names = per_fold[0].dataset_names
    for m in per_fold[1:]:
        if m.dataset_names != names or m.num_stages != per_fold[0].num_stages:
            raise ValueError("fold results have mismatched shapes")
    folds = [fm for m in per_fold for fm in m.per_fold]
    mean = [
        [_mean_metrics([fold[s][d] for fold in folds]) for d in range(len(names))]
        for s in range(len(names))
    ]
    return EvalMatrix(
        dataset_names=names,
        per_fold=folds,
        mean=mean,
        seen=[row[:] for row in per_fold[0].seen],
    )


def _evaluate_model(params: NetworkParams, manifests: list[DatasetManifest]) -> list[Metrics]:
    row = []
    for manifest in manifests:
        test = manifest.side(TEST)
        predictions = predict_samples(params, test)
        row.append(compute_metrics([int(s.label) for s in test], predictions))
    return row


def _adapt_stage(
    theta: NetworkParams,
    manifests: list[DatasetManifest],
    stage: int,
    strategy: StrategyConfig,
    train_cfg,
    fishers: list,
    fold_root: int,
    class_order,
) -> tuple[NetworkParams, StageLog, object]:
    """Returns the adapted params, the stage log, and the stage's retention
    artifact (FisherInfo or ReplayBuffer) when the strategy produces one."""
    new_data = manifests[stage]
    stage_cfg = replace(train_cfg, seed=derive_seed(fold_root, "stage", stage))
    if strategy.tag == "vanilla":
        return *vanilla_finetune(theta, new_data, strategy, stage_cfg), None
    if strategy.tag == "sequifi":
        fold_strategy = replace(strategy, class_order=tuple(class_order))
        return *sequifi_finetune(theta, new_data, fold_strategy, stage_cfg), None
    if strategy.tag == "ewc":
        fisher = estimate_fisher(
            theta,
            manifests[stage - 1].side(TRAIN),
            strategy.fisher_samples,
            seed=derive_seed(fold_root, "fisher", stage),
        )
        fishers.append(fisher)
        return *ewc_finetune(theta, list(fishers), new_data, strategy, stage_cfg), fisher
    if strategy.tag == "weight_avg":
        return *weight_avg_finetune(theta, new_data, strategy, stage_cfg), None
    if strategy.tag == "replay":
        buffer = build_replay_buffer(
            manifests[:stage],
            strategy.replay_fraction,
            seed=derive_seed(fold_root, "replay", stage),
        )
        return *replay_finetune(theta, buffer, new_data, strategy, stage_cfg), buffer
    raise ConfigError(f"unknown strategy tag {strategy.tag!r}")


def run_chain_fold(
    manifests: list[DatasetManifest],
    strategy: StrategyConfig,
    net_cfg,
    class_order,
    fold_index: int,
    arch: Architecture | None = None,
) -> tuple[EvalMatrix, list[StageLog], list[NetworkParams], list]:
    """One fold of the chain: train the initial model, adapt through the
    chain, evaluate after every stage. Returns a single-fold matrix, the
    per-stage logs, the per-stage parameter snapshots, and the per-stage
    retention artifacts (Fisher estimates or replay buffers, None when the
    strategy keeps none)."""
    _validate_chain(manifests)
    if arch is None:
        arch = Architecture(input_dim=manifests[0].feature_dim)
    fold_root = derive_seed(net_cfg.seed, "fold", fold_index)

    theta = init_params(arch, derive_seed(fold_root, "init"))
    stage0_cfg = replace(
        net_cfg, epochs=strategy.epochs_total, seed=derive_seed(fold_root, "stage", 0)
    )
    theta, log0 = train(theta, manifests[0].side(TRAIN), stage0_cfg)
    stage_logs = [StageLog(strategy="initial", phases=[PhaseLog(manifests[0].name, log0)])]
    snapshots = [theta]
    artifacts: list = [None]
    rows = [_evaluate_model(theta, manifests)]

    fishers: list = []
    stage_train_cfg = replace(net_cfg, epochs=strategy.epochs_total)
    for stage in range(1, len(manifests)):
        theta, stage_log, artifact = _adapt_stage(
            theta, manifests, stage, strategy, stage_train_cfg, fishers, fold_root, class_order
        )
        stage_logs.append(stage_log)
        snapshots.append(theta)
        artifacts.append(artifact)
        rows.append(_evaluate_model(theta, manifests))

    n = len(manifests)
    matrix = EvalMatrix(
        dataset_names=tuple(m.name for m in manifests),
        per_fold=[rows],
        mean=rows,
        seen=[[d <= s for d in range(n)] for s in range(n)],
    )
    return matrix, stage_logs, snapshots, artifacts


def _validate_chain(manifests: list[DatasetManifest]) -> None:
    if not 2 <= len(manifests) <= 5:
        raise ConfigError(f"a chain needs 2 to 5 datasets, got {len(manifests)}")
    dim = manifests[0].feature_dim
    for m in manifests:
        if m.feature_dim != dim:
            raise ConfigError(
                f"dataset {m.name!r} has feature_dim {m.feature_dim}, chain expects {dim}"
            )
        if m.labels_present() != set(LABELS):
            raise ConfigError(f"dataset {m.name!r} does not cover all four emotion classes")


def run_chain(
    manifests: list[DatasetManifest],
    strategy: StrategyConfig,
    net_cfg,
    plan: FoldPlan,
    arch: Architecture | None = None,
) -> EvalMatrix:
    """Run every fold of the plan and aggregate. The fold's permutation is the
    class order used by the sequential strategy at every stage."""
    per_fold = []
    for fold_index, order in enumerate(plan.folds):
        matrix, _, _, _ = run_chain_fold(manifests, strategy, net_cfg, order, fold_index, arch)
        per_fold.append(matrix)
    return aggregate_folds(per_fold)


def matrix_to_csv(matrix: EvalMatrix) -> str:
    """One row per stage x dataset x fold, plus mean rows (fold column 'mean')."""
    labels = stage_labels(matrix.dataset_names)
    lines = ["stage,dataset,seen,fold,accuracy,macro_f1"]
    for fold_idx, fold in enumerate(matrix.per_fold):
        for s, stage_label in enumerate(labels):
            for d, dataset in enumerate(matrix.dataset_names):
                cell = fold[s][d]
                seen = "true" if matrix.seen[s][d] else "false"
                lines.append(
                    f"{stage_label},{dataset},{seen},{fold_idx},"
                    f"{cell.accuracy!r},{cell.macro_f1!r}"
                )
    for s, stage_label in enumerate(labels):
        for d, dataset in enumerate(matrix.dataset_names):
            cell = matrix.mean[s][d]
            seen = "true" if matrix.seen[s][d] else "false"
            lines.append(
                f"{stage_label},{dataset},{seen},mean,{cell.accuracy!r},{cell.macro_f1!r}"
            )
    return "\n".join(lines) + "\n"


def matrix_to_markdown(matrix: EvalMatrix, model_label: str = "model") -> str:
    """Mean scores in %, grouped by seen-datasets stage; zero-shot cells italic."""
    labels = stage_labels(matrix.dataset_names)
    header = ["SD", "Model Type"]
    for name in matrix.dataset_names:
        header.extend([f"{name} A", f"{name} F1"])
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * len(header)) + "|",
    ]
    for s, stage_label in enumerate(labels):
        cells = []
        for d in range(len(matrix.dataset_names)):
            cell = matrix.mean[s][d]
            a = f"{100 * cell.accuracy:.2f}"
            f1 = f"{100 * cell.macro_f1:.2f}"
            if not matrix.seen[s][d]:
                a, f1 = f"*{a}*", f"*{f1}*"
            cells.extend([a, f1])
        lines.append("| " + " | ".join([stage_label, model_label] + cells) + " |")
    return "\n".join(lines) + "\n"
