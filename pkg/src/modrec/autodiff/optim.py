"""Adam optimizer as a pure function over parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators plus the completed step count."""

    step: int
    m: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]


def adam_init(params) -> AdamState:
    zeros = tuple(np.zeros_like(np.asarray(p)) for p in params)
    return AdamState(step=0, m=zeros, v=tuple(np.copy(z) for z in zeros))


def adam_step(params, grads, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays, inputs untouched.

    Update rule per parameter: p - lr * m_hat / (sqrt(v_hat) + eps), with
    eps added after the square root.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads, and state must have equal lengths")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params: list[np.ndarray] = []
    new_m = []
    new_v = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"grad shape {g.shape} does not match param {p.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_params.append((p - update).astype(p.dtype, copy=False))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(step=t, m=tuple(new_m), v=tuple(new_v))
