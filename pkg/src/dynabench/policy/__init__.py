"""Predictive policy: features, network, training and controllers."""
from .agents import LearnedPolicy, OraclePolicy, ReactivePolicy, ZeroPolicy, interception_time
from .features import object_future_feature, patch_features
from .network import PolicyParams, forward, grad, loss_action, loss_total, loss_world
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_bc

__all__ = [
    "LearnedPolicy", "OraclePolicy", "ReactivePolicy", "ZeroPolicy", "interception_time",
    "object_future_feature", "patch_features",
    "PolicyParams", "forward", "grad", "loss_action", "loss_total", "loss_world",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train_bc",
]
