"""Adam optimizer over named parameter sets.

Used for model training and latent inversion only; attack loops take plain
sign steps and never touch this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor | np.ndarray],
    state: AdamState,
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update.  Parameters are replaced, not mutated.

    Zero gradient leaves a parameter untouched (0 / (sqrt(0) + eps) == 0).
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_params: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != p.shape:
            raise ShapeMismatch("adam_step", [p.shape, g.shape], detail=name)
        g = g.astype(np.float32, copy=False)
        m = state.m.get(name)
        if m is None:
            m = np.zeros(p.shape, dtype=np.float32)
            v = np.zeros(p.shape, dtype=np.float32)
        else:
            v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(np.float32)
        new_params[name] = Tensor(p.data - update, requires_grad=True)
    return new_params, state
