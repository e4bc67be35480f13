"""Adam with standard bias correction, operating on named parameter trees."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import NetworkParams


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam(params: NetworkParams) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(arr) for name, arr in params.tensors.items()},
        v={name: np.zeros_like(arr) for name, arr in params.tensors.items()},
        t=0,
    )


def adam_step(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[NetworkParams, AdamState]:
    """One update: theta -= lr * m_hat / (sqrt(v_hat) + eps); t advances by 1."""
    t = state.t + 1
    new_tensors: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, theta in params.tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for tensor {name!r}")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for tensor {name!r}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_tensors[name] = theta - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    updated = NetworkParams(
        arch=params.arch,
        tensors=new_tensors,
        stats={k: v.copy() for k, v in params.stats.items()},
    )
    return updated, AdamState(m=new_m, v=new_v, t=t)
