from .model import (
    AccelConfig,
    ForwardResult,
    ModelConfig,
    UnrollModel,
    UnrollSchedule,
    backward,
    charbonnier_loss,
    loss_and_grads,
)
from .optim import AdamState, adam_step, lr_at
from .train import TrainConfig, TrainResult, train

__all__ = [
    "AccelConfig",
    "AdamState",
    "ForwardResult",
    "ModelConfig",
    "TrainConfig",
    "TrainResult",
    "UnrollModel",
    "UnrollSchedule",
    "adam_step",
    "backward",
    "charbonnier_loss",
    "loss_and_grads",
    "lr_at",
    "train",
]
