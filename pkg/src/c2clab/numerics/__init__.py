from .tensor import (
    Tensor,
    as_tensor,
    no_grad,
    add,
    sub,
    mul,
    div,
    neg,
    matmul,
    relu,
    exp,
    log,
    sqrt,
    power,
    tensor_sum,
    mean_over_axis,
    mean_all,
    concat,
    reshape,
    transpose,
    getitem,
    gather_columns,
    gather_pairs,
    slice_channels,
    conv1d_temporal,
    cosine_similarity,
    softmax_cross_entropy_with_temperature,
    one_hot,
)
from .hsic import hsic, median_bandwidth
from .optim import Adam
from .gradcheck import gradcheck, GradcheckReport

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "relu",
    "exp",
    "log",
    "sqrt",
    "power",
    "tensor_sum",
    "mean_over_axis",
    "mean_all",
    "concat",
    "reshape",
    "transpose",
    "getitem",
    "gather_columns",
    "gather_pairs",
    "slice_channels",
    "conv1d_temporal",
    "cosine_similarity",
    "softmax_cross_entropy_with_temperature",
    "one_hot",
    "hsic",
    "median_bandwidth",
    "Adam",
    "gradcheck",
    "GradcheckReport",
]
