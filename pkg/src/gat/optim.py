"""Optimizers over named parameter dicts.

Parameters are Tensors with `requires_grad=True`; `step` consumes the
`.grad` ndarrays left by `backward` and updates `.data` in place.
"""

import numpy as np


class SGD:
    """Stochastic gradient descent with classical momentum.

    v <- m v + g;  p <- p - lr v
    """

    def __init__(self, params, lr, momentum=0.0):
        self.params = dict(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._velocity = {}

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.momentum:
                v = self._velocity.get(name)
                if v is None:
                    v = np.zeros_like(p.data)
                v = self.momentum * v + g
                self._velocity[name] = v
                g = v
            p.data -= self.lr * g

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


class Adam:
    """Adam with bias correction; eps inside the square root denominator."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self._m = {}
        self._v = {}
        self._t = 0

    def step(self):
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self._t
        bc2 = 1.0 - b2 ** self._t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * (g * g)
            self._m[name] = m
            self._v[name] = v
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
