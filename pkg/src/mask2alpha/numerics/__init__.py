"""Minimal tensor substrate: arrays, differentiable ops, gradient checking, RNG."""
from .optim import Adam
from .gradcheck import grad_check
from .ops import (
    absolute, add, avg_pool2, bilinear_resize, bilinear_resize_forward, concat,
    conv2d, conv2d_forward, gelu, layer_norm, matmul, mean, mul, relu, reshape,
    resize_matrix, sigmoid, softmax_forward, softmax_rows, sub, take, tanh, total,
    transpose,
)
from .params import ParamSet, fan_in_normal
from .rng import SeededRng
from .tensor import DTYPE, Parameter, Tensor, as_tensor, no_grad

__all__ = [
    "Adam", "DTYPE", "ParamSet", "Parameter", "fan_in_normal", "SeededRng", "Tensor", "absolute", "add", "as_tensor", "avg_pool2",
    "bilinear_resize", "bilinear_resize_forward", "concat", "conv2d", "conv2d_forward",
    "gelu", "grad_check", "layer_norm", "matmul", "mean", "mul", "no_grad", "relu", "reshape",
    "resize_matrix", "sigmoid", "softmax_forward", "softmax_rows", "sub", "take",
    "tanh", "total", "transpose",
]
