"""Seed derivation: all randomness flows from one root seed via named substreams.

Every stochastic component (splits, init, shuffles, dropout, buffers, Fisher
draws) derives its generator from ``substream(root, *labels)`` so that any two
runs with the same root seed consume identical random streams regardless of
what else executed in the process.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = (1 << 64) - 1


def _label_entropy(label: int | str) -> int:
    if isinstance(label, bool):
        raise TypeError("bool is not a valid substream label")
    if isinstance(label, int):
        return label & _U64
    if isinstance(label, str):
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    raise TypeError(f"substream labels must be int or str, got {type(label).__name__}")


def seed_sequence(root: int, *labels: int | str) -> np.random.SeedSequence:
    entropy = [int(root) & _U64] + [_label_entropy(lab) for lab in labels]
    return np.random.SeedSequence(entropy)


def substream(root: int, *labels: int | str) -> np.random.Generator:
    """Generator for the named substream of ``root``."""
    return np.random.default_rng(seed_sequence(root, *labels))


def derive_seed(root: int, *labels: int | str) -> int:
    """A new 64-bit root seed deterministically derived from ``root`` and labels."""
    state = seed_sequence(root, *labels).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])
