from .layers import (
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    DsBlock,
    GlobalAvgPool,
    LayerSpec,
    PointwiseConv2d,
    ReLU,
    ResidualBlock,
    Softmax,
    compose_separable_kernel,
    param_count,
)
from .network import (
    Network,
    build_deepbrainnet_mini,
    gradient_check,
    predict,
    softmax_cross_entropy,
)
from .training import Adam, NonFiniteLossError, TrainConfig, TrainingHistory, evaluate_loss, train
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "CheckpointError",
    "Conv2d",
    "Dense",
    "DepthwiseConv2d",
    "Dropout",
    "DsBlock",
    "GlobalAvgPool",
    "LayerSpec",
    "Network",
    "NonFiniteLossError",
    "PointwiseConv2d",
    "ReLU",
    "ResidualBlock",
    "Softmax",
    "TrainConfig",
    "TrainingHistory",
    "build_deepbrainnet_mini",
    "compose_separable_kernel",
    "evaluate_loss",
    "gradient_check",
    "load_checkpoint",
    "param_count",
    "predict",
    "save_checkpoint",
    "softmax_cross_entropy",
    "train",
]
