"""Float64 tensor engine: tape autodiff, 3-D conv/pool, gradcheck, snapshots."""

from .conv import conv3d, maxpool3d
from .gradcheck import gradcheck, numeric_grad
from .snapshot import dump_array, dump_container, load_array, load_container
from .tensor import (
    Tape,
    Tensor,
    add,
    add_scalar,
    backward,
    clip,
    concat,
    div,
    dot,
    exp,
    glorot_uniform,
    log,
    matmul,
    mean_over_set,
    mul,
    mul_scalar,
    relu,
    reshape,
    sigmoid,
    stack,
    sub,
    sum_sorted,
    tensor,
    transpose,
    tsum,
)

__all__ = [
    "Tape",
    "Tensor",
    "tensor",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "add_scalar",
    "mul_scalar",
    "matmul",
    "dot",
    "exp",
    "log",
    "relu",
    "sigmoid",
    "clip",
    "tsum",
    "sum_sorted",
    "mean_over_set",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "glorot_uniform",
    "conv3d",
    "maxpool3d",
    "gradcheck",
    "numeric_grad",
    "dump_array",
    "load_array",
    "dump_container",
    "load_container",
]
