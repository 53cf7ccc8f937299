from roofwire.nn.batch import PointBatch, pack, pack_sets, unpack
from roofwire.nn.layers import (
    BatchNorm, ChannelAttention, Dropout, GlobalPool, GroupNorm, LeakyReLU, Linear, Module,
    Parameter, ReLU, Sigmoid, Softplus, leaky_relu, relu, residual_add, sigmoid, softplus,
)
from roofwire.nn.losses import bce_with_logits, smooth_l1
from roofwire.nn.optim import AdamW
from roofwire.nn.serialize import load_weights, save_weights

__all__ = [
    "PointBatch", "pack", "pack_sets", "unpack",
    "BatchNorm", "ChannelAttention", "Dropout", "GlobalPool", "GroupNorm", "LeakyReLU", "Linear", "Module",
    "Parameter", "ReLU", "Sigmoid", "Softplus", "leaky_relu", "relu", "residual_add", "sigmoid", "softplus",
    "bce_with_logits", "smooth_l1", "AdamW", "load_weights", "save_weights",
]
