"""Trainable tensors of the LSTM+dense classifier, as named arrays.

Keeping parameters as a flat name->array mapping makes the continual-learning
strategies natural: weight averaging, Fisher accumulators, and Adam moments
all mirror the same tree. Batch-norm running statistics live in a separate
``stats`` mapping because they are not trained by gradient descent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import substream


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    lstm_units: tuple[int, ...] = (64, 64)
    dense_units: tuple[int, ...] = (25, 20, 15, 10)
    num_classes: int = 4

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.lstm_units or any(u < 1 for u in self.lstm_units):
            raise ValueError("lstm_units must be a non-empty tuple of positive sizes")
        if any(u < 1 for u in self.dense_units):
            raise ValueError("dense_units must be positive sizes")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")

    def weight_matrix_names(self, include_recurrent: bool = True) -> list[str]:
        """Names of the matrices covered by the L2 penalty (biases and BN excluded)."""
        names = []
        for i in range(len(self.lstm_units)):
            names.append(f"lstm{i + 1}.w_x")
            if include_recurrent:
                names.append(f"lstm{i + 1}.w_h")
        names.extend(f"dense{k + 1}.w" for k in range(len(self.dense_units)))
        names.append("head.w")
        return names

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "lstm_units": list(self.lstm_units),
            "dense_units": list(self.dense_units),
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Architecture":
        return cls(
            input_dim=int(doc["input_dim"]),
            lstm_units=tuple(int(u) for u in doc["lstm_units"]),
            dense_units=tuple(int(u) for u in doc["dense_units"]),
            num_classes=int(doc["num_classes"]),
        )


@dataclass
class NetworkParams:
    arch: Architecture
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    stats: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            arch=self.arch,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            stats={k: v.copy() for k, v in self.stats.items()},
        )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(arch: Architecture, seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases, LSTM forget-gate bias 1, seeded."""
    rng = substream(seed, "init")
    tensors: dict[str, np.ndarray] = {}
    stats: dict[str, np.ndarray] = {}

    in_dim = arch.input_dim
    for i, units in enumerate(arch.lstm_units, start=1):
        tensors[f"lstm{i}.w_x"] = _glorot(rng, in_dim, 4 * units)
        tensors[f"lstm{i}.w_h"] = _glorot(rng, units, 4 * units)
        bias = np.zeros(4 * units)
        bias[units : 2 * units] = 1.0  # forget gate
        tensors[f"lstm{i}.b"] = bias
        in_dim = units

    for k, units in enumerate(arch.dense_units, start=1):
        tensors[f"dense{k}.w"] = _glorot(rng, in_dim, units)
        tensors[f"dense{k}.b"] = np.zeros(units)
        tensors[f"bn{k}.gamma"] = np.ones(units)
        tensors[f"bn{k}.beta"] = np.zeros(units)
        stats[f"bn{k}.mean"] = np.zeros(units)
        stats[f"bn{k}.var"] = np.ones(units)
        in_dim = units

    tensors["head.w"] = _glorot(rng, in_dim, arch.num_classes)
    tensors["head.b"] = np.zeros(arch.num_classes)
    return NetworkParams(arch=arch, tensors=tensors, stats=stats)


def zeros_like_tensors(params: NetworkParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.tensors.items()}


def check_same_shapes(a: NetworkParams, b: NetworkParams, what: str) -> None:
    if set(a.tensors) != set(b.tensors) or set(a.stats) != set(b.stats):
        raise ValueError(f"{what}: parameter trees have different tensor names")
    for name in a.tensors:
        if a.tensors[name].shape != b.tensors[name].shape:
            raise ValueError(f"{what}: shape mismatch for tensor {name!r}")
    for name in a.stats:
        if a.stats[name].shape != b.stats[name].shape:
            raise ValueError(f"{what}: shape mismatch for stat {name!r}")
