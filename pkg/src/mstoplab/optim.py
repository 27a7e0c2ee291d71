"""Adam optimizer over named parameter arrays, plus global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MissingGradientError(Exception):
    pass


@dataclass
class AdamState:
    """First/second-moment accumulators and step counter for Adam.

    Moment buffers are keyed by parameter name and shape-match their
    parameters; the step counter strictly increases.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, name, shape):
        if name not in self.m:
            self.m[name] = np.zeros(shape, dtype=np.float64)
            self.v[name] = np.zeros(shape, dtype=np.float64)
        elif self.m[name].shape != tuple(shape):
            raise ValueError(f"moment buffer for '{name}' has shape {self.m[name].shape}, expected {tuple(shape)}")


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place, over all entries of ``params``.

    Every parameter must have a gradient in ``grads``; a missing entry is a
    caller bug, not a zero gradient.
    """
    for name in params:
        if name not in grads:
            raise MissingGradientError(f"no gradient supplied for parameter '{name}'")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for '{name}' has shape {g.shape}, expected {p.shape}")
        state.ensure(name, p.shape)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint norm is at most ``max_norm``.

    Returns the pre-clip norm. ``max_norm`` of 0 or None disables clipping.
    """
    norm = global_norm(grads)
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm
