"""
Plain SGD and ADAM updates over NetworkParams.

Both steps update the parameter arrays in place and return the same object.
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from core.errors import ShapeError
from core.tensor_engine import NetworkParams

SGD = "sgd"
ADAM = "adam"


@dataclass
class OptimizerState:
    kind: str = ADAM
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in (SGD, ADAM):
            raise ValueError(f"unknown optimizer '{self.kind}' (expected sgd or adam)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def _check_shapes(params: NetworkParams, grads: NetworkParams) -> None:
    p, g = params.tensors(), grads.tensors()
    if len(p) != len(g) or any(a.shape != b.shape for a, b in zip(p, g)):
        raise ShapeError("gradients are not shaped like the parameters")


def sgd_step(params: NetworkParams, grads: NetworkParams, state: OptimizerState) -> NetworkParams:
    """theta <- theta - lr * grad - lr * weight_decay * theta"""
    _check_shapes(params, grads)
    lr, decay = state.learning_rate, state.weight_decay
    for theta, g in zip(params.tensors(), grads.tensors()):
        if decay:
            theta -= lr * decay * theta
        theta -= lr * g
    state.step += 1
    return params


def adam_step(params: NetworkParams, grads: NetworkParams, state: OptimizerState) -> NetworkParams:
    _check_shapes(params, grads)
    tensors = params.tensors()
    if not state.first_moment:
        state.first_moment = [np.zeros_like(t) for t in tensors]
        state.second_moment = [np.zeros_like(t) for t in tensors]
    elif any(m.shape != t.shape for m, t in zip(state.first_moment, tensors)):
        raise ShapeError("optimizer moments are not shaped like the parameters")

    state.step += 1
    b1, b2 = state.adam_beta1, state.adam_beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for theta, g, m, v in zip(tensors, grads.tensors(), state.first_moment, state.second_moment):
        if state.weight_decay:
            g = g + state.weight_decay * theta
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.adam_epsilon)
    return params


def apply_step(params: NetworkParams, grads: NetworkParams, state: OptimizerState) -> NetworkParams:
    if state.kind == SGD:
        return sgd_step(params, grads, state)
    return adam_step(params, grads, state)
