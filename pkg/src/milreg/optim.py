"""Adam with classic L2 weight decay (decay folded into the gradient)."""

from __future__ import annotations

import numpy as np

__all__ = ["Adam"]


class Adam:
    """Adaptive-moment optimizer over a dict of named parameter arrays.

    Standard defaults (beta1=0.9, beta2=0.999, eps=1e-8); weight decay is
    added to the gradient before the moment updates.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        learning_rate: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.params = params
        self.lr = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}
        self._t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self._t += 1
        bc1 = 1.0 - self.beta1**self._t
        bc2 = 1.0 - self.beta2**self._t
        for key, param in self.params.items():
            g = grads[key]
            if self.weight_decay:
                g = g + self.weight_decay * param
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            param -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
