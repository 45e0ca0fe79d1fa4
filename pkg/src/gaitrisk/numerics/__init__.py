"""Dense-tensor compute core: reverse-mode autodiff plus the Adam optimizer."""

from .adam import AdamState, adam_step
from .gradcheck import grad_check
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    conv3d,
    flatten_max,
    fully_connected,
    gather_index,
    index_axis,
    is_grad_enabled,
    leaky_relu,
    logsumexp,
    matmul,
    maxpool_spatial,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sqrt,
    sub,
    sum_,
    temporal_group_compress,
    transpose,
)

__all__ = [
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "concat",
    "conv3d",
    "flatten_max",
    "fully_connected",
    "gather_index",
    "grad_check",
    "index_axis",
    "is_grad_enabled",
    "leaky_relu",
    "logsumexp",
    "matmul",
    "maxpool_spatial",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "sqrt",
    "sub",
    "sum_",
    "temporal_group_compress",
    "transpose",
]
