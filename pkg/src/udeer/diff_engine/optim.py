"""Momentum SGD over a fixed list of parameter tensors."""

import numpy as np

from udeer.errors import MissingGradient
from udeer.diff_engine.tensor import Tensor


class SGD:
    """v <- momentum*v + g;  theta <- theta - lr*v;  grads cleared after."""

    def __init__(self, params, lr: float, momentum: float = 0.0):
        if lr <= 0.0:
            raise ValueError(f"lr must be positive, got {lr}")
        if not (0.0 <= momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._params: list[Tensor] = list(params)
        self._velocity = [np.zeros_like(p.data) for p in self._params]

    def step(self) -> None:
        for p, v in zip(self._params, self._velocity):
            if p.grad is None:
                raise MissingGradient("parameter has no gradient; run backward first")
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v
            p.grad = None
