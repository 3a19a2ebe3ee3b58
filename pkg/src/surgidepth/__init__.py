"""Monocular depth from a frozen ViT with low-rank q/v adapters, in plain numpy."""
from .autodiff import Tensor, backward, constant, parameter
from .decoder import BinConfig
from .depthmap import DepthMap
from .evaluation import MetricsReport, evaluate_dataset, evaluate_pair
from .losses import LossWeights, total_loss
from .lora import count_trainable
from .model import PROFILES, DepthModel, build_model, count_parameters, load_model, save_model
from .train import TrainConfig, fit, trainable_params
from .vit import EncoderConfig

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "constant", "parameter",
    "BinConfig", "DepthMap", "MetricsReport", "evaluate_dataset", "evaluate_pair",
    "LossWeights", "total_loss", "count_trainable",
    "PROFILES", "DepthModel", "build_model", "count_parameters", "load_model", "save_model",
    "TrainConfig", "fit", "trainable_params", "EncoderConfig",
]
