from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamWState:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


class AdamW:
    """Adam with decoupled weight decay.

    The decay term shrinks the parameter directly (``p -= lr * wd * p``) and
    never enters the moment estimates.
    """

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4, names=None):
        self.params: list[Tensor] = list(params)
        self.names = list(names) if names is not None else [f"param{i}" for i in range(len(self.params))]
        self.state = AdamWState(learning_rate=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], epsilon=eps)
        self.state.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.state.second_moment = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for name, p in zip(self.names, self.params):
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in {name} {p.shape}; step aborted")
        st = self.state
        st.step += 1
        lr, wd = st.learning_rate, st.weight_decay
        b1, b2 = st.beta1, st.beta2
        bc1 = 1.0 - b1 ** st.step
        bc2 = 1.0 - b2 ** st.step
        for p, m, v in zip(self.params, st.first_moment, st.second_moment):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if wd:
                p.data -= lr * wd * p.data
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + st.epsilon)


def adamw_step(state: AdamWState, params, grads) -> list[np.ndarray]:
    """Functional single step: returns new parameter arrays and advances ``state``."""
    params = [np.array(p, dtype=np.float64) for p in params]
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(params) != len(grads):
        raise ValueError("params and grads are not aligned")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at index {i}; step aborted")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    out = []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p = p - state.learning_rate * state.weight_decay * p
        p = p - state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        out.append(p)
    return out
