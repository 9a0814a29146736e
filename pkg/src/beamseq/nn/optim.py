"""Adam optimizer over named float64 arrays, plus global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "adam_init", "adam_step", "clip_global_norm"]


@dataclass
class AdamState:
    """First/second moment per named parameter and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(
    named_params: dict[str, np.ndarray],
    alpha: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in named_params.items()},
        v={k: np.zeros_like(p) for k, p in named_params.items()},
        t=0,
        alpha=alpha,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    named_params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
) -> None:
    """In-place update: m, v moving averages, bias correction, then
    p -= alpha * m_hat / (sqrt(v_hat) + eps)."""
    if set(named_params) != set(state.m):
        raise ValueError("parameter names do not match optimizer state")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in named_params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.alpha * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns (norm_before, clipped_flag). Scaling happens in place.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
        return norm, True
    return norm, False
