"""First-order optimizers that update a flat parameter vector in place (ascent)."""
from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, momentum=0.9):
        self.momentum = momentum
        self._v = None

    def step(self, params, grad, lr):
        if self._v is None:
            self._v = np.zeros_like(params)
        self._v *= self.momentum
        self._v += grad
        params += lr * self._v


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = self._v = None
        self._t = 0

    def step(self, params, grad, lr):
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
        self._t += 1
        self._m *= self.beta1
        self._m += (1 - self.beta1) * grad
        self._v *= self.beta2
        self._v += (1 - self.beta2) * np.square(grad)
        denom = np.sqrt(self._v / (1 - self.beta2 ** self._t))
        denom += self.eps
        step = lr / (1 - self.beta1 ** self._t) * self._m
        step /= denom
        params += step


def make_optimizer(name, momentum=0.9):
    name = name.lower()
    if name == "sgd":
        return SGD(momentum)
    if name == "adam":
        return Adam()
    raise ValueError(f"unknown optimizer {name!r}; expected 'sgd' or 'adam'")
