from .layers import (
    BatchNorm,
    Conv3x3,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    ReLU,
    ResidualBlock,
    Sequential,
    zero_grads,
)
from .models import (
    Decoder,
    INPUT_SHAPE,
    build_deep,
    build_shallow,
    count_sublayers,
    deep_spec,
    forward,
    instantiate,
    parameter_count,
    shallow_spec,
)
from .modelio import load_model, save_model
from .train import TrainConfig, TrainingHistory, grad_check, normalization_stats, rmse, train
