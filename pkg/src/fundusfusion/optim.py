"""Adam optimizer over a ParamStore.

Moment buffers are keyed by root parameter name, so a tensor shared under
several names is updated exactly once per step. The learning rate is a plain
attribute; schedulers mutate it between steps.
"""

import numpy as np


class Adam:
    def __init__(self, store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.store.unique():
            if p.grad is None:
                raise ValueError(f"Adam.step: parameter {name!r} has no gradient")
            g = p.grad
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            else:
                v = self._v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            self._m[name] = m
            self._v[name] = v
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self):
        self.store.zero_grads()


class PlateauHalver:
    """Halve the optimizer lr when the tracked loss stops improving."""

    def __init__(self, optimizer, patience=5, min_delta=1e-4, min_lr=1e-6):
        self.opt = optimizer
        self.patience = patience
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.best = np.inf
        self.stale = 0

    def update(self, loss):
        """Feed one epoch loss; returns True when the lr was halved."""
        if loss < self.best - self.min_delta:
            self.best = loss
            self.stale = 0
            return False
        self.stale += 1
        if self.stale > self.patience and self.opt.lr > self.min_lr:
            self.opt.lr = max(self.opt.lr * 0.5, self.min_lr)
            self.stale = 0
            return True
        return False
