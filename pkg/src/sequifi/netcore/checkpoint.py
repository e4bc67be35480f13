"""Versioned npz checkpoints: params + optimizer state round-trip bitwise."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .optimizer import AdamState
from .params import Architecture, NetworkParams

FORMAT_VERSION = 1


def save_checkpoint(path, params: NetworkParams, adam_state: AdamState | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, arr in params.tensors.items():
        arrays[f"tensor:{name}"] = arr
    for name, arr in params.stats.items():
        arrays[f"stat:{name}"] = arr
    meta = {
        "version": FORMAT_VERSION,
        "arch": params.arch.to_dict(),
        "adam_t": adam_state.t if adam_state is not None else None,
    }
    if adam_state is not None:
        for name, arr in adam_state.m.items():
            arrays[f"adam_m:{name}"] = arr
        for name, arr in adam_state.v.items():
            arrays[f"adam_v:{name}"] = arr
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)


def load_checkpoint(path) -> tuple[NetworkParams, AdamState | None]:
    path = Path(path)
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta["version"] != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta['version']}")
        arch = Architecture.from_dict(meta["arch"])
        tensors = {}
        stats = {}
        adam_m = {}
        adam_v = {}
        for key in data.files:
            if key.startswith("tensor:"):
                tensors[key.removeprefix("tensor:")] = data[key]
            elif key.startswith("stat:"):
                stats[key.removeprefix("stat:")] = data[key]
            elif key.startswith("adam_m:"):
                adam_m[key.removeprefix("adam_m:")] = data[key]
            elif key.startswith("adam_v:"):
                adam_v[key.removeprefix("adam_v:")] = data[key]
    params = NetworkParams(arch=arch, tensors=tensors, stats=stats)
    state = None
    if meta["adam_t"] is not None:
        state = AdamState(m=adam_m, v=adam_v, t=int(meta["adam_t"]))
    return params, state
