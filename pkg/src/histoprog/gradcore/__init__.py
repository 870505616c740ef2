"""Minimal reverse-mode autodiff, optimizers and checkpoints."""

from .checkpoint import MAGIC, CheckpointError, ModelCheckpoint, TrainingDiverged
from .gradcheck import GradCheckError, GradCheckReport, grad_check
from .nn import (MLPSpec, activate, clone_params, cross_entropy, dense, dropout, frozen, glorot,
                 init_dense, init_mlp, layer_norm, mlp_forward)
from .optim import EmaState, NonFiniteGradient, OptimState, ema_update, sgd_momentum_step, step
from .tensor import Tensor, concat, stack, tensor, where

__all__ = [
    "MAGIC", "CheckpointError", "ModelCheckpoint", "TrainingDiverged",
    "GradCheckError", "GradCheckReport", "grad_check",
    "MLPSpec", "activate", "clone_params", "cross_entropy", "dense", "dropout", "frozen", "glorot",
    "init_dense", "init_mlp", "layer_norm", "mlp_forward",
    "EmaState", "NonFiniteGradient", "OptimState", "ema_update", "sgd_momentum_step", "step",
    "Tensor", "concat", "stack", "tensor", "where",
]
