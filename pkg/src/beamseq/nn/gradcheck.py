"""Central finite-difference checker for hand-written backward passes."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

__all__ = ["finite_diff_check"]


def finite_diff_check(
    loss_fn: Callable[[], float],
    params: Sequence[np.ndarray],
    analytic_grads: Sequence[np.ndarray],
    rng: np.random.Generator | None = None,
    max_probes_per_tensor: int = 16,
    h: float = 1e-5,
) -> float:
    """Probe random coordinates of each parameter tensor and compare
    (f(p+h) - f(p-h)) / 2h against the analytic gradient.

    ``loss_fn`` must recompute the scalar loss from the current contents of
    ``params`` (arrays are perturbed in place and restored). Relative error is
    |a - n| / max(|a|, |n|, 1e-12); the max over all probes is returned.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p, g in zip(params, analytic_grads):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch: {p.shape} vs {g.shape}")
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        n = flat_p.size
        if n <= max_probes_per_tensor:
            probe_idx = np.arange(n)
        else:
            probe_idx = rng.choice(n, size=max_probes_per_tensor, replace=False)
        for idx in probe_idx:
            orig = flat_p[idx]
            flat_p[idx] = orig + h
            f_plus = loss_fn()
            flat_p[idx] = orig - h
            f_minus = loss_fn()
            flat_p[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            analytic = flat_g[idx]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, rel)
    return worst
