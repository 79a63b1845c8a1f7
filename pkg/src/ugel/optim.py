"""Adam optimiser with bias correction, functional style.

``adam_step`` returns fresh parameter and state objects; nothing is mutated
in place, which keeps training trajectories replayable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import ModelParams

__all__ = ["OptimState", "adam_init", "adam_step"]


@dataclass
class OptimState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None


def adam_init(model: ModelParams, learning_rate: float, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> OptimState:
    zeros = [np.zeros_like(w) for w in model.weights] + [
        np.zeros_like(b) for b in model.biases
    ]
    m = [z.copy() for z in zeros]
    v = [z.copy() for z in zeros]
    return OptimState(learning_rate, beta1, beta2, epsilon, 0, m, v)


def adam_step(model: ModelParams, grads, opt: OptimState):
    """One Adam update.  ``grads`` is (grad_weights, grad_biases) matching the
    model's parameter lists.  Returns (updated model, updated state)."""
    grad_w, grad_b = grads
    flat_params = list(model.weights) + list(model.biases)
    flat_grads = list(grad_w) + list(grad_b)
    if len(flat_params) != len(flat_grads):
        raise ValueError("gradient structure does not match parameters")
    for p, g in zip(flat_params, flat_grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.shape}")

    t = opt.step + 1
    b1, b2 = opt.beta1, opt.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params = []
    new_m = []
    new_v = []
    for p, g, m, v in zip(flat_params, flat_grads, opt.m, opt.v):
        m_new = b1 * m + (1.0 - b1) * g
        v_new = b2 * v + (1.0 - b2) * g * g
        m_hat = m_new / bc1
        v_hat = v_new / bc2
        new_params.append(p - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon))
        new_m.append(m_new)
        new_v.append(v_new)

    n_w = len(model.weights)
    updated = ModelParams(
        model.arch, new_params[:n_w], new_params[n_w:], model.init_seed
    )
    new_state = OptimState(
        opt.learning_rate, b1, b2, opt.epsilon, t, new_m, new_v
    )
    return updated, new_state
