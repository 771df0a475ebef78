from .ops import (abs, add, avg_pool2d, broadcast, clip, concat, conv2d, l2_norm, layer_norm,
                  leaky_relu, matmul, mul, reduce_mean, reduce_sum, relu, reshape, softmax,
                  split, sqrt, square, sub, transpose, transpose_conv2d)
from .spectral import dft2, idft2
from .tensor import DimensionError, GraphError, Tensor, as_tensor, backward

__all__ = [
    "Tensor", "as_tensor", "backward", "DimensionError", "GraphError",
    "abs", "add", "avg_pool2d", "broadcast", "clip", "concat", "conv2d", "l2_norm",
    "layer_norm", "leaky_relu", "matmul", "mul", "reduce_mean", "reduce_sum", "relu",
    "reshape", "softmax", "split", "sqrt", "square", "sub", "transpose", "transpose_conv2d",
    "dft2", "idft2", "numeric_grad", "max_rel_error",
]

from .gradcheck import max_rel_error, numeric_grad  # noqa: E402
