"""Training loop: Charbonnier loss, Adam, milestone LR halving."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..errors import ConfigError, NumericError
from . import checkpoint
from .model import UnrollModel, loss_and_grads
from .optim import AdamState, adam_step, lr_at

log = logging.getLogger(__name__)

Sampler = Callable[[int], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 2e-4
    milestones: tuple[int, ...] = ()
    beta1: float = 0.9
    beta2: float = 0.99
    batch: int = 16
    patch: int = 48
    steps: int = 1000
    eps_c: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.lr0 < 0:
            raise ConfigError("lr0 must be >= 0")
        if self.batch < 1 or self.patch < 1 or self.steps < 0:
            raise ConfigError("batch, patch must be >= 1 and steps >= 0")
        if not self.eps_c > 0:
            raise ConfigError("eps_c must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


@dataclass
class TrainResult:
    model: UnrollModel
    log: list[tuple[int, float, float]] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def train(
    model: UnrollModel,
    cfg: TrainConfig,
    sampler: Sampler,
    checkpoint_dir=None,
    log_every: int = 0,
) -> TrainResult:
    """Train ``model`` in place for ``cfg.steps`` Adam steps.

    ``sampler(step)`` must return ``(f_task, u_gt)``. The logged loss of a
    step is measured before that step's update. When ``checkpoint_dir`` is
    given, a checkpoint is written each time a milestone is reached.

    Raises:
        NumericError: the loss or a gradient became non-finite.
    """
    state = AdamState.zeros_like(model.params)
    result = TrainResult(model)
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    for step in range(cfg.steps):
        f, u_gt = sampler(step)
        loss, grads, _ = loss_and_grads(model, f, u_gt, cfg.eps_c)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericError(step, f"training diverged at step {step}")
        lr = lr_at(step, cfg.lr0, cfg.milestones)
        adam_step(model.params, grads, state, lr, cfg.beta1, cfg.beta2)
        result.log.append((step, lr, loss))
        if log_every and step % log_every == 0:
            log.info("step %d lr %.3g loss %.6f", step, lr, loss)
        if ckdir is not None and (step + 1) in cfg.milestones:
            path = ckdir / f"checkpoint_{step + 1:07d}.bin"
            checkpoint.save(path, model, step + 1)
            result.checkpoints.append(path)
    return result


def write_loss_log(path, entries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in entries:
            w.writerow([step, repr(lr), repr(loss)])
