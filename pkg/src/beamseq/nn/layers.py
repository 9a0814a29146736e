"""Layers: dense, embedding, LSTM cell, global attention, dropout, softmax CE.

Parameter containers are plain dataclasses of float64 arrays. ``params_items``
/ ``zeros_like_params`` / ``accumulate_params`` give generic traversal so the
optimizer and checkpoints never need layer-specific code.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

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
]


class NumericError(ArithmeticError):
    """Non-finite value produced where the math guarantees finiteness."""


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class DenseParams:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class EmbeddingParams:
    table: np.ndarray  # (vocab, dim)


@dataclass
class LSTMParams:
    """One LSTM cell, gates kept separate: input i, forget f, cell g, output o."""

    wx_i: np.ndarray  # (H, D)
    wx_f: np.ndarray
    wx_g: np.ndarray
    wx_o: np.ndarray
    wh_i: np.ndarray  # (H, H)
    wh_f: np.ndarray
    wh_g: np.ndarray
    wh_o: np.ndarray
    b_i: np.ndarray  # (H,)
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.wx_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.wx_i.shape[1]


@dataclass
class AttentionParams:
    """Global attention with the multiplicative (general) score."""

    w_score: np.ndarray  # (H, H), score_s = q^T W h_s
    w_combine: np.ndarray  # (H, 2H), applied to [context; query]
    b_combine: np.ndarray  # (H,)


def params_items(params, prefix: str = ""):
    """Yield (name, array) for every field of a parameter dataclass."""
    for f in dataclasses.fields(params):
        yield (prefix + f.name if prefix else f.name), getattr(params, f.name)


def zeros_like_params(params):
    return type(params)(
        **{f.name: np.zeros_like(getattr(params, f.name)) for f in dataclasses.fields(params)}
    )


def accumulate_params(dst, src) -> None:
    for f in dataclasses.fields(dst):
        getattr(dst, f.name).__iadd__(getattr(src, f.name))


# ---------------------------------------------------------------------------
# initialization: uniform U[-k, k] with k = 1/sqrt(fan_in)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    k = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-k, k, size=shape)


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int) -> DenseParams:
    return DenseParams(
        weight=_uniform(rng, (out_dim, in_dim), in_dim),
        bias=np.zeros(out_dim),
    )


def init_embedding(rng: np.random.Generator, vocab: int, dim: int) -> EmbeddingParams:
    return EmbeddingParams(table=_uniform(rng, (vocab, dim), dim))


def init_lstm(rng: np.random.Generator, input_dim: int, hidden: int) -> LSTMParams:
    # Forget-gate bias starts at 1.0 for a stable memory path.
    wx = {g: _uniform(rng, (hidden, input_dim), input_dim) for g in "ifgo"}
    wh = {g: _uniform(rng, (hidden, hidden), hidden) for g in "ifgo"}
    return LSTMParams(
        wx_i=wx["i"], wx_f=wx["f"], wx_g=wx["g"], wx_o=wx["o"],
        wh_i=wh["i"], wh_f=wh["f"], wh_g=wh["g"], wh_o=wh["o"],
        b_i=np.zeros(hidden), b_f=np.ones(hidden),
        b_g=np.zeros(hidden), b_o=np.zeros(hidden),
    )


def init_attention(rng: np.random.Generator, hidden: int) -> AttentionParams:
    return AttentionParams(
        w_score=_uniform(rng, (hidden, hidden), hidden),
        w_combine=_uniform(rng, (hidden, 2 * hidden), 2 * hidden),
        b_combine=np.zeros(hidden),
    )


# ---------------------------------------------------------------------------
# dense


def dense_forward(p: DenseParams, x: np.ndarray):
    """y = x W^T + b for x of shape (B, in)."""
    if x.ndim != 2 or x.shape[1] != p.weight.shape[1]:
        raise ValueError(f"dense expects (B, {p.weight.shape[1]}), got {x.shape}")
    y = x @ p.weight.T + p.bias
    return y, (p, x)


def dense_backward(cache, grad_y: np.ndarray):
    p, x = cache
    grads = DenseParams(weight=grad_y.T @ x, bias=grad_y.sum(axis=0))
    grad_x = grad_y @ p.weight
    return grads, grad_x


# ---------------------------------------------------------------------------
# embedding


def embedding_forward(p: EmbeddingParams, tokens: np.ndarray):
    """Row lookup for integer tokens of shape (B,)."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise ValueError(f"tokens must be 1-D, got shape {tokens.shape}")
    if np.any(tokens < 0) or np.any(tokens >= p.table.shape[0]):
        raise ValueError(
            f"token out of range [0, {p.table.shape[0]}): {tokens.min()}..{tokens.max()}"
        )
    return p.table[tokens], (p, tokens)


def embedding_backward(cache, grad_y: np.ndarray):
    p, tokens = cache
    grads = EmbeddingParams(table=np.zeros_like(p.table))
    np.add.at(grads.table, tokens, grad_y)
    return grads


# ---------------------------------------------------------------------------
# LSTM cell


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_cell_forward(p: LSTMParams, x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """One step of the standard LSTM recurrence.

    i, f, o = sigmoid(...), g = tanh(...), c = f*c_prev + i*g, h = o*tanh(c).
    """
    if x.shape[1] != p.input_size or h_prev.shape[1] != p.hidden_size:
        raise ValueError(
            f"lstm shapes: x {x.shape} vs D={p.input_size}, h {h_prev.shape} vs H={p.hidden_size}"
        )
    i = _sigmoid(x @ p.wx_i.T + h_prev @ p.wh_i.T + p.b_i)
    f = _sigmoid(x @ p.wx_f.T + h_prev @ p.wh_f.T + p.b_f)
    g = np.tanh(x @ p.wx_g.T + h_prev @ p.wh_g.T + p.b_g)
    o = _sigmoid(x @ p.wx_o.T + h_prev @ p.wh_o.T + p.b_o)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite LSTM activation")
    cache = (p, x, h_prev, c_prev, i, f, g, o, c, tc)
    return h, c, cache


def lstm_cell_backward(cache, grad_h: np.ndarray, grad_c: np.ndarray):
    """Backward through one step; returns (param grads, dx, dh_prev, dc_prev)."""
    p, x, h_prev, c_prev, i, f, g, o, c, tc = cache
    do = grad_h * tc
    dc = grad_c + grad_h * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dz_i = di * i * (1.0 - i)
    dz_f = df * f * (1.0 - f)
    dz_g = dg * (1.0 - g * g)
    dz_o = do * o * (1.0 - o)

    grads = LSTMParams(
        wx_i=dz_i.T @ x, wx_f=dz_f.T @ x, wx_g=dz_g.T @ x, wx_o=dz_o.T @ x,
        wh_i=dz_i.T @ h_prev, wh_f=dz_f.T @ h_prev,
        wh_g=dz_g.T @ h_prev, wh_o=dz_o.T @ h_prev,
        b_i=dz_i.sum(axis=0), b_f=dz_f.sum(axis=0),
        b_g=dz_g.sum(axis=0), b_o=dz_o.sum(axis=0),
    )
    dx = dz_i @ p.wx_i + dz_f @ p.wx_f + dz_g @ p.wx_g + dz_o @ p.wx_o
    dh_prev = dz_i @ p.wh_i + dz_f @ p.wh_f + dz_g @ p.wh_g + dz_o @ p.wh_o
    dc_prev = dc * f
    return grads, dx, dh_prev, dc_prev


# ---------------------------------------------------------------------------
# global attention (multiplicative score)


def attention_forward(p: AttentionParams, query: np.ndarray, enc_states: np.ndarray):
    """Attend over encoder states with score_s = q^T W h_s.

    query: (B, H); enc_states: (B, T, H). Returns (context (B, H),
    weights (B, T), combined (B, H), cache) where
    combined = tanh(W_c [context; query] + b).
    """
    if enc_states.ndim != 3 or enc_states.shape[1] < 1:
        raise ValueError(f"encoder states must be (B, T>=1, H), got {enc_states.shape}")
    qp = query @ p.w_score  # (B, H)
    scores = np.einsum("bh,bth->bt", qp, enc_states)
    weights = softmax(scores)
    context = np.einsum("bt,bth->bh", weights, enc_states)
    cat = np.concatenate([context, query], axis=1)
    z = cat @ p.w_combine.T + p.b_combine
    combined = np.tanh(z)
    cache = (p, query, enc_states, qp, weights, cat, combined)
    return context, weights, combined, cache


def attention_backward(cache, grad_combined: np.ndarray):
    """Backward from the combined output; returns (param grads, dquery, denc)."""
    p, query, enc_states, qp, weights, cat, combined = cache
    hidden = query.shape[1]
    dz = grad_combined * (1.0 - combined * combined)
    g_w_combine = dz.T @ cat
    g_b_combine = dz.sum(axis=0)
    dcat = dz @ p.w_combine
    dcontext = dcat[:, :hidden]
    dquery = dcat[:, hidden:].copy()

    dweights = np.einsum("bh,bth->bt", dcontext, enc_states)
    denc = weights[:, :, None] * dcontext[:, None, :]
    # softmax Jacobian applied row-wise
    dscores = weights * (dweights - np.sum(dweights * weights, axis=1, keepdims=True))
    dqp = np.einsum("bt,bth->bh", dscores, enc_states)
    denc += dscores[:, :, None] * qp[:, None, :]
    g_w_score = query.T @ dqp
    dquery += dqp @ p.w_score.T
    grads = AttentionParams(w_score=g_w_score, w_combine=g_w_combine, b_combine=g_b_combine)
    return grads, dquery, denc


# ---------------------------------------------------------------------------
# dropout


def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator, training: bool):
    """Inverted dropout: zero with probability ``rate``, scale survivors by
    1/(1-rate). Identity when not training."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def dropout_backward(cache, grad_y: np.ndarray):
    if cache is None:
        return grad_y
    keep, scale = cache
    return grad_y * keep * scale


# ---------------------------------------------------------------------------
# softmax cross-entropy


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; works on 1-D or 2-D input."""
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_cross_entropy_batch(logits: np.ndarray, targets: np.ndarray):
    """Per-row -log softmax(logits)[target] and its gradient.

    logits: (B, X); targets: (B,) ints. Returns (losses (B,), grads (B, X)).
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"shape mismatch: logits {logits.shape}, targets {targets.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise ValueError("target class out of range")
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(logits.shape[0])
    losses = log_norm - shifted[rows, targets]
    grads = np.exp(shifted - log_norm[:, None])
    grads[rows, targets] -= 1.0
    return losses, grads


def softmax_cross_entropy(logits: np.ndarray, target: int):
    """Single-sample convenience wrapper; returns (loss, grad_logits)."""
    losses, grads = softmax_cross_entropy_batch(
        np.asarray(logits, dtype=np.float64)[None, :], np.asarray([target])
    )
    return float(losses[0]), grads[0]
