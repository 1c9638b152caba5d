"""AdamW with decoupled weight decay.

The functional core :func:`adamw_step` mutates plain arrays and an
:class:`OptimizerState`; the :class:`AdamW` wrapper drives it from Tensor
gradients and allows a per-step learning-rate override for schedules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    """First/second moment buffers plus the shared step counter."""

    lr: float
    beta1: float
    beta2: float
    weight_decay: float
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params, lr, beta1, beta2, weight_decay) -> "OptimizerState":
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            weight_decay=weight_decay,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray],
               state: OptimizerState, lr: float | None = None) -> None:
    """One decoupled-weight-decay update, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
    eta = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        if state.weight_decay:
            update = update + state.weight_decay * p
        p -= (eta * update).astype(p.dtype)


class AdamW:
    """Optimizer over a list of graph Tensors."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, weight_decay: float = 0.0):
        self.params = list(params)
        self.state = OptimizerState.for_params(
            [p.data for p in self.params], lr, beta1, beta2, weight_decay
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        grads = []
        for p in self.params:
            grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        adamw_step([p.data for p in self.params], grads, self.state, lr=lr)
