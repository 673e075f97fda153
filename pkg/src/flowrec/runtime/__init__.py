"""Distributed training loop: rank workers, ghost exchange, optimizer."""

from .driver import (
    DeadlockError,
    RankFailure,
    TrainingPlan,
    TrainResult,
    build_plan,
    read_loss_history,
    train,
    train_many,
    write_loss_history,
    write_run_manifest,
)
from .objective import LocalObjective
from .optim import AdamState, adam_step, clip_by_global_norm, lr_at
from .worker import (
    GhostMessage,
    OutgoingEdge,
    RankWorker,
    TrainConfig,
    WorkerSpec,
    anchor_normalize,
    derive_param_seed,
)

__all__ = [
    "AdamState",
    "DeadlockError",
    "GhostMessage",
    "LocalObjective",
    "OutgoingEdge",
    "RankFailure",
    "RankWorker",
    "TrainConfig",
    "TrainResult",
    "TrainingPlan",
    "WorkerSpec",
    "adam_step",
    "anchor_normalize",
    "build_plan",
    "clip_by_global_norm",
    "derive_param_seed",
    "lr_at",
    "read_loss_history",
    "train",
    "train_many",
    "write_loss_history",
    "write_run_manifest",
]
