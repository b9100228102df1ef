"""Adaptive moment estimation over a Parameters collection."""

from typing import Dict

import numpy as np

from .model import Parameters
from .state import DistillConfig


class Adam:
    """Bias-corrected Adam; updates parameter values in place."""

    def __init__(self, params: Parameters, learning_rate: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m: Dict[str, np.ndarray] = {name: np.zeros_like(t.values) for name, t in params.items()}
        self._v: Dict[str, np.ndarray] = {name: np.zeros_like(t.values) for name, t in params.items()}

    @classmethod
    def from_config(cls, params: Parameters, config: DistillConfig) -> "Adam":
        return cls(params, config.learning_rate, config.beta1, config.beta2, config.eps)

    def step(self) -> None:
        """Apply one update from the current `.grad` slots, then clear them."""
        self.steps += 1
        correction1 = 1.0 - self.beta1**self.steps
        correction2 = 1.0 - self.beta2**self.steps
        for name, t in self.params.items():
            if t.grad is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * t.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * t.grad**2
            t.values -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        self.params.zero_grad()
