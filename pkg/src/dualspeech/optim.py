"""Adam with the warmup-then-inverse-sqrt learning rate schedule."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ContractViolation


def lr_schedule(step, d_model, warmup_steps, factor=1.0):
    """Rate at 1-based ``step``: d_model^-0.5 * min(step^-0.5, step*warmup^-1.5).

    Increases linearly to the peak at step == warmup_steps, then decays
    as the inverse square root.  ``factor`` rescales the whole curve.
    """
    if step < 1:
        raise ContractViolation(f"schedule step must be >= 1, got {step}")
    return factor * d_model ** -0.5 * min(step ** -0.5, step * warmup_steps ** -1.5)


class OptimizerState:
    """Per-parameter Adam moments plus the shared step counter."""

    def __init__(self, params, d_model, warmup_steps=4000, beta1=0.9,
                 beta2=0.98, epsilon=1e-9, lr_factor=1.0):
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.step = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.warmup_steps = warmup_steps
        self.d_model = d_model
        self.lr_factor = lr_factor


def adam_step(params, state):
    """One Adam update from the gradients stored on ``params``.

    Parameters with no gradient this step (grad is None) see a zero
    gradient; with zero moments that leaves them bit-unchanged.
    """
    lr = lr_schedule(state.step + 1, state.d_model, state.warmup_steps,
                     state.lr_factor)
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    t = state.step + 1
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = 0.0
        elif g.shape != p.data.shape:
            raise ContractViolation(
                f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g if isinstance(g, np.ndarray) else 0.0)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    state.step += 1


def zero_grads(params):
    for p in params.values():
        p.grad = None
