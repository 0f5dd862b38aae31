"""Trainable vascular-function estimation network."""
from .model import (AifNetModel, ConvLayer, build_model, forward, gradients,
                    layer_channels, load_model, pearson_loss, predict,
                    save_model, weighted_curve)
from .train import TrainConfig, TrainHistory, augment, recalibrate_vof, train

__all__ = [
    "AifNetModel", "ConvLayer", "TrainConfig", "TrainHistory", "augment",
    "build_model", "forward", "gradients", "layer_channels", "load_model",
    "pearson_loss", "predict", "recalibrate_vof", "save_model", "train",
    "weighted_curve",
]
