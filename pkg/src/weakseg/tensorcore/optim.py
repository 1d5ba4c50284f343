"""SGD with classical momentum and decoupled-from-nothing weight decay:

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

Parameters whose grad is None are skipped entirely (no decay, no velocity
update); the training loop uses that to freeze branches.
"""

from __future__ import annotations

import numpy as np

from .tensor import ParameterStore


class SgdOptimizer:
    def __init__(self, params: ParameterStore, momentum: float = 0.9, weight_decay: float = 0.0005):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            v = self._velocity.get(name)
            if v is None:
                v = np.zeros_like(p.data)
                self._velocity[name] = v
            v *= self.momentum
            v += p.grad
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data -= lr * v

    def zero_grad(self):
        self.params.zero_grad()


def sgd_step(params: ParameterStore, velocity: dict, lr: float, momentum: float,
             weight_decay: float):
    """Single functional update; velocity dict is mutated in place."""
    opt = SgdOptimizer(params, momentum, weight_decay)
    opt._velocity = velocity
    opt.step(lr)
