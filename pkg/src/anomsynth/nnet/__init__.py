"""A small float64 neural-network engine: conv/pool/dense/dropout/upsample/softmax, SGD."""

from .layers import Context, Conv, Dense, Dropout, MaxPool, ReLU, Softmax, Upsample, softmax
from .network import Cache, NetSpec, Network, backward, forward
from .train import TrainConfig, fit, sgd_step, weighted_cross_entropy

__all__ = [
    "Cache", "Context", "Conv", "Dense", "Dropout", "MaxPool", "NetSpec", "Network", "ReLU",
    "Softmax", "TrainConfig", "Upsample", "backward", "fit", "forward", "sgd_step", "softmax",
    "weighted_cross_entropy",
]
