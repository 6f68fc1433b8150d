"""Convolutional regression network built on numpy."""
from .loss import loss, loss_and_grad, normalize_output
from .network import Network, NetworkConfig, backward, forward, reference_config
from .train import TrainConfig, adam_step, predict, train

__all__ = [
    "Network", "NetworkConfig", "TrainConfig", "adam_step", "backward", "forward", "loss",
    "loss_and_grad", "normalize_output", "predict", "reference_config", "train",
]
