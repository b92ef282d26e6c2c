"""Adam with bias correction and optional global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def adam_step(params, grads, state: AdamState, clip=None) -> float:
    """Apply one Adam update in place.

    ``params`` and ``grads`` map names to arrays of identical shapes; missing
    gradients count as zero. If ``clip`` is set and the global L2 norm of the
    gradients exceeds it, all gradients are rescaled to norm ``clip`` first.
    Returns the pre-clipping gradient norm. A NaN/Inf gradient aborts the step
    before anything is modified.
    """
    full = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        full[name] = g
    norm = global_norm(full)
    scale = 1.0
    if clip is not None and norm > clip:
        scale = clip / norm

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = full[name] * scale
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return norm
