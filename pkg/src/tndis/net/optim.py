"""First-order optimizers over ``Model.named_params``."""

from __future__ import annotations

import numpy as np


class Optimizer:
    def __init__(self, model, lr: float, clip: float | None = None):
        self.model = model
        self.lr = lr
        self.clip = clip

    def _grads(self):
        items = [(layer, key, layer.params[key], layer.grads[key]) for layer, key, _ in self.model.named_params()]
        if self.clip:
            total = np.sqrt(sum(float(np.sum(g * g)) for *_, g in items))
            if total > self.clip:
                items = [(l, k, p, g * (self.clip / total)) for l, k, p, g in items]
        return items

    def step(self) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, model, lr: float = 0.01, momentum: float = 0.0, clip=None):
        super().__init__(model, lr, clip)
        self.momentum = momentum
        self.velocity: dict = {}

    def step(self):
        for layer, key, p, g in self._grads():
            if self.momentum:
                v = self.velocity.get((layer.name, key))
                v = g if v is None else self.momentum * v + g
                self.velocity[(layer.name, key)] = v
                g = v
            p -= self.lr * g


class Adam(Optimizer):
    def __init__(self, model, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, clip=None):
        super().__init__(model, lr, clip)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for layer, key, p, g in self._grads():
            k = (layer.name, key)
            m = self.m.get(k)
            v = self.v.get(k)
            m = (1 - self.b1) * g if m is None else self.b1 * m + (1 - self.b1) * g
            v = (1 - self.b2) * g * g if v is None else self.b2 * v + (1 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, model, lr: float, clip=None, momentum: float = 0.0):
    if name == "adam":
        return Adam(model, lr, clip=clip)
    if name == "sgd":
        return SGD(model, lr, momentum=momentum, clip=clip)
    raise ValueError(f"unknown optimizer {name!r}")
