"""Adam over a ModelState's parameter dict."""

from __future__ import annotations

import numpy as np

from ..errors import MissingGradients


def adam_step(state, grads: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Apply one bias-corrected Adam update in place and return ``state``.

    Parameters of frozen groups are skipped entirely (values and moments stay
    bit-identical). Every trainable parameter needs an entry in ``grads``.
    """
    trainable = [k for k in state.params if state.trainable(k)]
    missing = [k for k in trainable if grads.get(k) is None]
    if missing:
        raise MissingGradients(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k in trainable:
        g = grads[k]
        m = state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        mhat = m / c1
        denom = np.sqrt(v / c2) + eps
        with np.errstate(divide="ignore", invalid="ignore"):
            update = np.where(denom > 0, mhat / denom, 0.0)
        state.params[k] = state.params[k] - lr * update
    return state


def collect_grads(tensors: dict) -> dict:
    """Gradient arrays of leaf tensors; trainable leaves off the path get zeros."""
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items() if t.requires_grad}
