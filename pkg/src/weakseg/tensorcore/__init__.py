from .tensor import Tensor, ParameterStore, backward, topo_order
from .ops import (add, sub, mul, square, tsum, tmean, relu, sigmoid, softmax,
                  reshape, conv2d, maxpool2d, global_average_pool, fully_connected)
from .optim import SgdOptimizer, sgd_step
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError

__all__ = [
    "Tensor", "ParameterStore", "backward", "topo_order",
    "add", "sub", "mul", "square", "tsum", "tmean", "relu", "sigmoid", "softmax",
    "reshape", "conv2d", "maxpool2d", "global_average_pool", "fully_connected",
    "SgdOptimizer", "sgd_step",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
