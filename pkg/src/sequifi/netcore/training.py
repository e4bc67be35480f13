"""Seeded minibatch training loop with instrumented per-epoch logs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..corpus import Sample
from ..rng import substream
from ..validation import check_labels
from .network import TRAIN_MODE, backward, forward, loss, predict_classes
from .optimizer import init_adam, adam_step
from .params import NetworkParams


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 60
    l2_lambda: float = 1e-4
    dropout_rate: float = 0.2
    l2_on_recurrent: bool = True
    # normalization source for train-mode forward, and whether running stats
    # track the batches; single-class fine-tuning phases disable both
    bn_batch_stats: bool = True
    bn_update_stats: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be nonnegative")


@dataclass
class EpochLog:
    index: int
    mean_loss: float
    batch_sizes: list[int] = field(default_factory=list)
    batch_label_sets: list[tuple[int, ...]] = field(default_factory=list)
    batch_dataset_sets: list[tuple[str, ...]] = field(default_factory=list)


@dataclass
class TrainLog:
    epochs: list[EpochLog] = field(default_factory=list)

    @property
    def num_epochs(self) -> int:
        return len(self.epochs)

    @property
    def losses(self) -> list[float]:
        return [e.mean_loss for e in self.epochs]


def batch_from_samples(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack sample features into (X, lengths, y); sequences are zero-padded.

    Pooled vectors become length-1 sequences. The true length of each
    sequence is kept so the classifier reads the hidden state at the real
    final step, not at the padding.
    """
    if not samples:
        raise ValueError("empty sample collection")
    mats = []
    for s in samples:
        if s.features is None:
            raise ValueError(f"sample {s.id!r} has no features; run extraction first")
        mats.append(np.atleast_2d(np.asarray(s.features, dtype=np.float64)))
    dim = mats[0].shape[1]
    lengths = np.array([m.shape[0] for m in mats], dtype=np.int64)
    max_t = int(lengths.max())
    x = np.zeros((len(mats), max_t, dim))
    for row, m in enumerate(mats):
        x[row, : m.shape[0]] = m
    y = check_labels([int(s.label) for s in samples])
    return x, lengths, y


def train_arrays(
    params: NetworkParams,
    x: np.ndarray,
    lengths: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    penalty=None,
    adam_state=None,
    dataset_ids=None,
) -> tuple[NetworkParams, TrainLog, "AdamState"]:
    """Run cfg.epochs over (x, y): seeded shuffle per epoch, batches of
    cfg.batch_size (last batch smaller), forward/backward/Adam step.

    ``penalty`` optionally contributes an extra loss and gradient each step
    (used for weight consolidation); when None the path is untouched, which
    keeps penalty-free strategies bitwise identical to plain training.
    ``adam_state`` continues from a previous call instead of a fresh
    optimizer; the final state is always returned.
    """
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot train on an empty sample set")
    params = params.copy()
    log = TrainLog()
    adam = adam_state if adam_state is not None else init_adam(params)
    if cfg.epochs == 0:
        return params, log, adam
    for epoch in range(cfg.epochs):
        perm = substream(cfg.seed, "shuffle", epoch).permutation(n)
        drop_rng = substream(cfg.seed, "dropout", epoch)
        record = EpochLog(index=epoch, mean_loss=0.0)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb, lb, yb = x[idx], lengths[idx], y[idx]
            probs, cache = forward(
                params, xb, mode=TRAIN_MODE, rng=drop_rng,
                dropout_rate=cfg.dropout_rate, lengths=lb,
                bn_batch_stats=cfg.bn_batch_stats,
            )
            batch_loss = loss(probs, yb, params, cfg.l2_lambda, cfg.l2_on_recurrent)
            grads = backward(cache, yb, cfg.l2_lambda, cfg.l2_on_recurrent)
            if penalty is not None:
                batch_loss += penalty.loss(params)
                penalty.add_gradient(params, grads)
            params, adam = adam_step(
                params, grads, adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps
            )
            if cfg.bn_update_stats:
                params.stats.update(cache["bn_updates"])
            total += batch_loss * idx.size
            record.batch_sizes.append(int(idx.size))
            record.batch_label_sets.append(tuple(sorted(set(int(v) for v in yb))))
            if dataset_ids is not None:
                record.batch_dataset_sets.append(tuple(sorted({dataset_ids[i] for i in idx})))
        record.mean_loss = total / n
        log.epochs.append(record)
    return params, log, adam


def train(
    params: NetworkParams,
    samples: list[Sample],
    cfg: TrainConfig,
    penalty=None,
) -> tuple[NetworkParams, TrainLog]:
    x, lengths, y = batch_from_samples(samples)
    new_params, log, _ = train_arrays(
        params, x, lengths, y, cfg, penalty=penalty,
        dataset_ids=[s.dataset_id for s in samples],
    )
    return new_params, log


def predict_samples(params: NetworkParams, samples: list[Sample]) -> np.ndarray:
    x, lengths, _ = batch_from_samples(samples)
    return predict_classes(params, x, lengths)
