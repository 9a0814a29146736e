"""Minimal neural-network kernel with hand-written backward passes.

Everything operates on float64 numpy arrays with a leading batch dimension.
Forward functions return ``(output..., cache)``; the matching backward
function consumes the cache and upstream gradients and returns exact analytic
gradients for parameters and inputs.
"""

from .layers import (
    NumericError,
    DenseParams,
    EmbeddingParams,
    LSTMParams,
    AttentionParams,
    dense_forward,
    dense_backward,
    embedding_forward,
    embedding_backward,
    lstm_cell_forward,
    lstm_cell_backward,
    attention_forward,
    attention_backward,
    dropout_forward,
    dropout_backward,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_batch,
    init_dense,
    init_embedding,
    init_lstm,
    init_attention,
    params_items,
    zeros_like_params,
    accumulate_params,
)
from .optim import AdamState, adam_init, adam_step, clip_global_norm
from .gradcheck import finite_diff_check
from .checkpoint import CheckpointError, save_tensors, load_tensors

__all__ = [
    "NumericError",
    "DenseParams",
    "EmbeddingParams",
    "LSTMParams",
    "AttentionParams",
    "dense_forward",
    "dense_backward",
    "embedding_forward",
    "embedding_backward",
    "lstm_cell_forward",
    "lstm_cell_backward",
    "attention_forward",
    "attention_backward",
    "dropout_forward",
    "dropout_backward",
    "softmax",
    "softmax_cross_entropy",
    "softmax_cross_entropy_batch",
    "init_dense",
    "init_embedding",
    "init_lstm",
    "init_attention",
    "params_items",
    "zeros_like_params",
    "accumulate_params",
    "AdamState",
    "adam_init",
    "adam_step",
    "clip_global_norm",
    "finite_diff_check",
    "CheckpointError",
    "save_tensors",
    "load_tensors",
]
