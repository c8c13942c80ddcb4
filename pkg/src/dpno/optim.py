"""AdamW with decoupled weight decay.

Update rule per step (functional form in ``adamw_step``):

    t <- t + 1
    m <- b1*m + (1-b1)*g
    v <- b2*v + (1-b2)*g^2
    mhat = m / (1 - b1^t),  vhat = v / (1 - b2^t)
    theta <- theta - lr * ( mhat / (sqrt(vhat) + eps) + weight_decay * theta )

The decay term multiplies the parameter directly (decoupled), not the
gradient. Defaults: lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
weight_decay=1e-4; all overridable per run.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamWState", "adamw_step", "AdamW"]


@dataclass
class AdamWState:
    """Per-parameter moment buffers and hyperparameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def for_param(cls, param: np.ndarray, **hyper) -> "AdamWState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), **hyper)


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamWState) -> np.ndarray:
    """Apply one AdamW update in place; returns the updated parameter."""
    if param.shape != grad.shape:
        raise ValueError(f"adamw_step: shape mismatch param {param.shape} vs grad {grad.shape}")
    if state.m.shape != param.shape:
        raise ValueError(f"adamw_step: state shape {state.m.shape} does not match param {param.shape}")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1**state.t)
    vhat = state.v / (1.0 - state.beta2**state.t)
    param -= state.lr * (mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * param)
    return param


@dataclass
class AdamW:
    """Optimizer over a list of ``Tensor`` parameters."""

    params: list
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    _states: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._states = [
            AdamWState.for_param(
                p.data,
                lr=self.lr,
                beta1=self.betas[0],
                beta2=self.betas[1],
                eps=self.eps,
                weight_decay=self.weight_decay,
            )
            for p in self.params
        ]

    def set_lr(self, lr: float) -> None:
        self.lr = lr
        for s in self._states:
            s.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, s in zip(self.params, self._states):
            if p.grad is None:
                continue
            adamw_step(p.data, p.grad, s)
