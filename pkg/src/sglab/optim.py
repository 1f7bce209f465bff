"""Adam over named tensor maps, returning new tensors instead of mutating."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of the tensors named in ``grads``.

    Returns ``(new_params, new_state)``; tensors not in ``grads`` are passed
    through untouched. ``lr == 0`` is an exact no-op on the parameters.
    """
    t = state.t + 1
    m, v = dict(state.m), dict(state.v)
    new = dict(params)
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = params[name]
        m_prev = m.get(name)
        v_prev = v.get(name)
        m[name] = (1 - beta1) * g if m_prev is None else beta1 * m_prev + (1 - beta1) * g
        v[name] = (1 - beta2) * g * g if v_prev is None else beta2 * v_prev + (1 - beta2) * g * g
        if lr:
            new[name] = p - lr * (m[name] / bc1) / (torch.sqrt(v[name] / bc2) + eps)
    return new, AdamState(m, v, t)
