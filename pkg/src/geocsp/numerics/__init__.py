"""Minimal numeric substrate: tape-based reverse-mode differentiation over
dense float64 arrays, recurrent cells, the AdamW/EMA training kit, and PCA."""

from .autodiff import (
    Tensor,
    add,
    dropout,
    gather_rows,
    linear,
    lstm_gates,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    scatter_sum,
    sigmoid,
    slice_cols,
    softmax,
    softmax_cross_entropy,
    sum_all,
    tanh,
)
from .cells import (
    LstmParams,
    RnnParams,
    init_lstm_params,
    init_rnn_params,
    lstm_cell,
    lstm_param_count,
    rnn_cell,
    rnn_param_count,
)
from .optim import AdamW, Ema, clip_global_norm, cosine_cycle_lr
from .pca import pca

__all__ = [
    "AdamW",
    "Ema",
    "LstmParams",
    "RnnParams",
    "Tensor",
    "add",
    "clip_global_norm",
    "cosine_cycle_lr",
    "dropout",
    "gather_rows",
    "init_lstm_params",
    "init_rnn_params",
    "linear",
    "lstm_cell",
    "lstm_gates",
    "lstm_param_count",
    "matmul",
    "mean_all",
    "mul",
    "pca",
    "relu",
    "reshape",
    "rnn_cell",
    "rnn_param_count",
    "scatter_sum",
    "sigmoid",
    "slice_cols",
    "softmax",
    "softmax_cross_entropy",
    "sum_all",
    "tanh",
]
