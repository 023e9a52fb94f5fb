"""Adam with bias correction and a step-halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def lr_at(step: int, lr0: float, milestones) -> float:
    """``lr0`` halved once for every milestone with ``milestone <= step``."""
    passed = sum(1 for m in milestones if step >= m)
    return lr0 * 0.5**passed


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.99,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update of ``params`` and ``state``."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if lr == 0.0:
            continue
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
