"""Minimal dense-tensor reverse-mode autodiff plus neural building blocks."""

from jere.ndcore.tensor import (
    Graph,
    Tensor,
    add,
    add_n,
    add_rowvec,
    add_scalar,
    avg_pool_rows,
    backward,
    concat,
    dot,
    dropout,
    gather,
    log,
    matmul,
    max_rows,
    mean_rows,
    mul,
    rows,
    row,
    scale,
    sigmoid,
    softmax,
    softmax_masked,
    stack,
    sub,
    tanh,
    tensor_sum,
    tile_row,
    transpose,
    zero_grads,
    zeros,
)
from jere.ndcore.nn import (
    LSTMParams,
    bilstm,
    char_cnn,
    conv1d_same,
    lstm_params,
    lstm_step,
    uniform_init,
)
from jere.ndcore.optim import AdamState, adam_step
from jere.ndcore.gradcheck import finite_diff_check

__all__ = [
    "AdamState",
    "Graph",
    "LSTMParams",
    "Tensor",
    "adam_step",
    "add",
    "add_n",
    "add_rowvec",
    "add_scalar",
    "avg_pool_rows",
    "backward",
    "bilstm",
    "char_cnn",
    "concat",
    "conv1d_same",
    "dot",
    "dropout",
    "finite_diff_check",
    "gather",
    "log",
    "lstm_params",
    "lstm_step",
    "matmul",
    "max_rows",
    "mean_rows",
    "mul",
    "rows",
    "row",
    "scale",
    "sigmoid",
    "softmax",
    "softmax_masked",
    "stack",
    "sub",
    "tanh",
    "tensor_sum",
    "tile_row",
    "transpose",
    "uniform_init",
    "zero_grads",
    "zeros",
]
