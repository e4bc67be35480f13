"""The five fine-tuning strategies for adapting a trained classifier to a new
corpus: vanilla fine-tuning, sequential per-class fine-tuning, weight
consolidation with Fisher importance, weight averaging, and replay.

Every strategy maps (previous params, new dataset, config) to adapted params
and an instrumented stage log. All strategies consume the same epoch budget
per stage; the sequential strategy spends it as one phase per class. The
optimizer state is reset at every stage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import LABELS, TRAIN, DatasetManifest, EmotionLabel, Sample, class_subset
from .errors import ConfigError
from .netcore.network import EVAL_MODE, backward, forward
from .netcore.params import NetworkParams, check_same_shapes, zeros_like_tensors
from .netcore.training import TrainConfig, TrainLog, batch_from_samples, train, train_arrays
from .rng import substream
from .validation import round_half_up

STRATEGY_TAGS = ("vanilla", "sequifi", "ewc", "weight_avg", "replay")


@dataclass(frozen=True)
class StrategyConfig:
    tag: str
    epochs_total: int = 60
    sequifi_epochs_per_class: int = 15
    class_order: tuple[EmotionLabel, ...] | None = None
    ewc_lambda: float = 100.0
    fisher_samples: int | None = None  # None: the full previous train split
    wa_alpha: float = 0.5
    replay_fraction: float = 0.10
    # Single-class batches have degenerate batch statistics: they subtract
    # out exactly the class evidence and re-condition the running stats on
    # one class. Per-class phases therefore normalize with the running
    # statistics held frozen, making normalization a fixed preprocessing.
    sequifi_frozen_bn: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tag not in STRATEGY_TAGS:
            raise ConfigError(
                f"unknown strategy tag {self.tag!r}; valid tags: {', '.join(STRATEGY_TAGS)}"
            )
        if self.epochs_total < 0 or self.sequifi_epochs_per_class < 0:
            raise ConfigError("epoch budgets must be nonnegative")
        if self.tag == "sequifi":
            if self.sequifi_epochs_per_class * len(LABELS) != self.epochs_total:
                raise ConfigError(
                    "fair-budget rule violated: sequifi_epochs_per_class * "
                    f"{len(LABELS)} must equal epochs_total "
                    f"({self.sequifi_epochs_per_class} * {len(LABELS)} != {self.epochs_total})"
                )
            if self.class_order is not None and sorted(self.class_order) != sorted(LABELS):
                raise ConfigError("class_order must be a permutation of the four labels")
        if self.ewc_lambda < 0:
            raise ConfigError("ewc_lambda must be nonnegative")
        if not 0.0 <= self.wa_alpha <= 1.0:
            raise ConfigError("wa_alpha must lie in [0, 1]")
        if not 0.0 < self.replay_fraction <= 1.0:
            raise ConfigError("replay_fraction must lie in (0, 1]")
        if self.fisher_samples is not None and self.fisher_samples <= 0:
            raise ConfigError("fisher_samples must be positive")


@dataclass
class PhaseLog:
    name: str
    train_log: TrainLog


@dataclass
class StageLog:
    strategy: str
    phases: list[PhaseLog] = field(default_factory=list)

    @property
    def epoch_units(self) -> int:
        return sum(p.train_log.num_epochs for p in self.phases)


@dataclass
class FisherInfo:
    """Diagonal empirical Fisher weights plus the anchor they were taken at."""

    values: dict[str, np.ndarray]
    anchor: NetworkParams

    def __post_init__(self) -> None:
        for name, arr in self.values.items():
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"Fisher entries for {name!r} must be finite and nonnegative")


@dataclass
class ReplayBuffer:
    samples: list[Sample]
    counts: dict[tuple[str, EmotionLabel], int] = field(default_factory=dict)


class QuadraticPenalty:
    """Sum over consolidated stages of (lambda/2) * F * (theta - anchor)^2."""

    def __init__(self, fishers: list[FisherInfo], lam: float):
        self.fishers = fishers
        self.lam = lam

    def loss(self, params: NetworkParams) -> float:
        total = 0.0
        for fisher in self.fishers:
            for name, f in fisher.values.items():
                diff = params.tensors[name] - fisher.anchor.tensors[name]
                total += float(np.sum(f * diff * diff))
        return 0.5 * self.lam * total

    def add_gradient(self, params: NetworkParams, grads: dict[str, np.ndarray]) -> None:
        for fisher in self.fishers:
            for name, f in fisher.values.items():
                grads[name] += self.lam * f * (
                    params.tensors[name] - fisher.anchor.tensors[name]
                )


def vanilla_finetune(
    theta_prev: NetworkParams,
    dataset: DatasetManifest,
    cfg: StrategyConfig,
    train_cfg: TrainConfig,
) -> tuple[NetworkParams, StageLog]:
    """Direct training on the new train split, no retention mechanism."""
    samples = dataset.side(TRAIN)
    if not samples:
        raise ValueError(f"dataset {dataset.name!r} has an empty train split")
    params, log = train(theta_prev, samples, replace(train_cfg, epochs=cfg.epochs_total))
    return params, StageLog(strategy="vanilla", phases=[PhaseLog(dataset.name, log)])


def sequifi_finetune(
    theta_prev: NetworkParams,
    dataset: DatasetManifest,
    cfg: StrategyConfig,
    train_cfg: TrainConfig,
) -> tuple[NetworkParams, StageLog]:
    """Adapt one emotion class at a time, in cfg.class_order.

    Each class phase fine-tunes on that class's train subset for
    cfg.sequifi_epochs_per_class epochs. One optimizer state spans the whole
    stage, so the warm second moments damp the gradient reversal at each
    phase boundary. Classes with no samples in the split are skipped with a
    warning.
    """
    if cfg.tag != "sequifi":
        raise ConfigError("sequifi_finetune needs a config with tag='sequifi'")
    order = cfg.class_order if cfg.class_order is not None else LABELS
    subsets = {label: class_subset(dataset, label, TRAIN) for label in order}
    if all(not subset for subset in subsets.values()):
        raise ValueError(f"dataset {dataset.name!r} has no train samples in any class")

    theta = theta_prev
    stage = StageLog(strategy="sequifi")
    phase_cfg = replace(
        train_cfg,
        epochs=cfg.sequifi_epochs_per_class,
        bn_batch_stats=not cfg.sequifi_frozen_bn,
        bn_update_stats=not cfg.sequifi_frozen_bn,
    )
    adam = None
    for label in order:
        subset = subsets[label]
        if not subset:
            warnings.warn(
                f"dataset {dataset.name!r} has no train samples of class "
                f"{label.as_string!r}; phase skipped",
                stacklevel=2,
            )
            continue
        x, lengths, y = batch_from_samples(subset)
        theta, log, adam = train_arrays(theta, x, lengths, y, phase_cfg, adam_state=adam)
        stage.phases.append(PhaseLog(label.as_string, log))
    return theta, stage


def estimate_fisher(
    params: NetworkParams,
    samples: list[Sample],
    n: int | None = None,
    seed: int = 0,
) -> FisherInfo:
    """Diagonal empirical Fisher: mean squared per-sample gradient of
    log p(true label | x) at ``params``.

    ``n=None`` uses every sample once; an explicit ``n`` takes a seeded
    subset without replacement (capped at the corpus size).
    """
    if not samples:
        raise ValueError("cannot estimate Fisher information from an empty sample set")
    if n is not None and n <= 0:
        raise ValueError("fisher sample count must be positive")
    if n is None or n >= len(samples):
        chosen = list(samples)
    else:
        order = substream(seed, "fisher").permutation(len(samples))
        chosen = [samples[i] for i in order[:n]]

    x, lengths, y = batch_from_samples(chosen)
    accum = zeros_like_tensors(params)
    for i in range(len(chosen)):
        _, cache = forward(params, x[i : i + 1], mode=EVAL_MODE, lengths=lengths[i : i + 1])
        grads = backward(cache, y[i : i + 1], l2_lambda=0.0)
        for name, g in grads.items():
            accum[name] += g * g
    count = len(chosen)
    values = {name: arr / count for name, arr in accum.items()}
    return FisherInfo(values=values, anchor=params.copy())


def ewc_finetune(
    theta_prev: NetworkParams,
    fisher: FisherInfo | list[FisherInfo],
    dataset: DatasetManifest,
    cfg: StrategyConfig,
    train_cfg: TrainConfig,
) -> tuple[NetworkParams, StageLog]:
    """Fine-tune with a quadratic pull toward each consolidated anchor,
    weighted by Fisher importance."""
    fishers = [fisher] if isinstance(fisher, FisherInfo) else list(fisher)
    for f in fishers:
        check_same_shapes(f.anchor, theta_prev, "ewc_finetune")
    samples = dataset.side(TRAIN)
    if not samples:
        raise ValueError(f"dataset {dataset.name!r} has an empty train split")
    penalty = QuadraticPenalty(fishers, cfg.ewc_lambda) if cfg.ewc_lambda != 0.0 else None
    params, log = train(
        theta_prev, samples, replace(train_cfg, epochs=cfg.epochs_total), penalty=penalty
    )
    return params, StageLog(strategy="ewc", phases=[PhaseLog(dataset.name, log)])


def weight_average(
    theta_old: NetworkParams, theta_new: NetworkParams, alpha: float
) -> NetworkParams:
    """Elementwise alpha * old + (1 - alpha) * new, including BN running stats."""
    check_same_shapes(theta_old, theta_new, "weight_average")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return NetworkParams(
        arch=theta_old.arch,
        tensors={
            name: alpha * theta_old.tensors[name] + (1.0 - alpha) * theta_new.tensors[name]
            for name in theta_old.tensors
        },
        stats={
            name: alpha * theta_old.stats[name] + (1.0 - alpha) * theta_new.stats[name]
            for name in theta_old.stats
        },
    )


def weight_avg_finetune(
    theta_prev: NetworkParams,
    dataset: DatasetManifest,
    cfg: StrategyConfig,
    train_cfg: TrainConfig,
) -> tuple[NetworkParams, StageLog]:
    """Fine-tune a candidate on the new data, then average it with the
    pre-stage model."""
    candidate, stage = vanilla_finetune(theta_prev, dataset, cfg, train_cfg)
    stage.strategy = "weight_avg"
    return weight_average(theta_prev, candidate, cfg.wa_alpha), stage


def build_replay_buffer(
    previous_manifests: list[DatasetManifest],
    fraction: float = 0.10,
    seed: int = 0,
) -> ReplayBuffer:
    """Per previously seen dataset and class, keep round(fraction * n) train
    samples, drawn uniformly without replacement, seeded. Class proportions of
    each source corpus are preserved up to rounding."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    buffer = ReplayBuffer(samples=[])
    for manifest in previous_manifests:
        for label in LABELS:
            pool = class_subset(manifest, label, TRAIN)
            k = round_half_up(fraction * len(pool))
            buffer.counts[(manifest.name, label)] = k
            if k == 0:
                continue
            order = substream(seed, "replay", manifest.name, int(label)).permutation(len(pool))
            buffer.samples.extend(pool[i] for i in sorted(order[:k]))
    return buffer


def replay_finetune(
    theta_prev: NetworkParams,
    buffer: ReplayBuffer,
    dataset: DatasetManifest,
    cfg: StrategyConfig,
    train_cfg: TrainConfig,
) -> tuple[NetworkParams, StageLog]:
    """Fine-tune on the new train split plus the rehearsal buffer, shuffled
    jointly every epoch."""
    combined = dataset.side(TRAIN) + buffer.samples
    if not combined:
        raise ValueError("replay training set is empty")
    params, log = train(theta_prev, combined, replace(train_cfg, epochs=cfg.epochs_total))
    return params, StageLog(strategy="replay", phases=[PhaseLog(dataset.name, log)])
