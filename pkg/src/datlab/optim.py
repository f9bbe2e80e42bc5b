"""Adam optimizer with bias correction.

Moment buffers are allocated at construction (zeros) and a parameter is
only touched on steps where it has a gradient: parameters whose grad is
``None`` keep their value, their moments, and their step count, which is
what makes gated-off attention branches bit-stable across a phase.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class AdamState:
    """Per-parameter moment buffers and step counter."""

    __slots__ = ("m", "v", "t")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.t = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update: m,v moment tracking + bias-corrected step."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, m {state.m.shape}")
    state.t += 1
    state.m += (1.0 - beta1) * (grad - state.m)
    state.v += (1.0 - beta2) * (grad * grad - state.v)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {name: AdamState(p.shape, p.dtype) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, self.state[name], self.lr,
                      self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all present gradients so their joint L2 norm is <= max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                # fresh buffer: stored grads may be aliased, never mutated
                p.grad = p.grad * scale
    return norm
