from .ops import (
    add,
    concat_last_dim,
    cross_entropy,
    dropout,
    embedding_lookup,
    hadamard,
    layer_norm,
    log_softmax,
    matmul,
    mean_rows,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_last,
    softmax,
    softmax_rows,
    stack_steps,
    sub,
    sum_all,
    tanh,
    transpose_last,
)
from .tensor import NonFiniteError, ShapeError, Tape, TapeError, Tensor, active_tape, backward

__all__ = [
    "Tensor", "Tape", "backward", "active_tape",
    "ShapeError", "NonFiniteError", "TapeError",
    "add", "sub", "hadamard", "scale", "matmul", "transpose_last",
    "relu", "sigmoid", "tanh", "softmax", "softmax_rows", "log_softmax",
    "layer_norm", "concat_last_dim", "slice_last", "mean_rows",
    "embedding_lookup", "reshape", "stack_steps", "sum_all", "cross_entropy", "dropout",
]
