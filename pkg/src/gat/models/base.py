"""Parameter registry and shared layer building blocks."""

import numpy as np

from .. import ops, precision
from ..tensor import Tensor


class Module:
    """Tree of named parameters.

    Subclasses add parameters with `param` and submodules with `child`;
    `parameters()` flattens the tree into an ordered {dotted name: Tensor}
    dict.  Declaration order is the checkpoint payload order.
    """

    def __init__(self):
        self._params = {}
        self._children = {}

    def param(self, name, array):
        t = Tensor(np.asarray(array, dtype=precision.dtype()), requires_grad=True)
        self._params[name] = t
        return t

    def child(self, name, module):
        self._children[name] = module
        return module

    def parameters(self, prefix=""):
        out = {}
        for n, p in self._params.items():
            out[prefix + n] = p
        for n, m in self._children.items():
            out.update(m.parameters(prefix + n + "."))
        return out

    def load_flat(self, payload):
        """Fill parameters, in declaration order, from a flat float vector."""
        params = self.parameters()
        total = sum(p.size for p in params.values())
        payload = np.asarray(payload).reshape(-1)
        if payload.size != total:
            raise ValueError(f"parameter payload has {payload.size} values, expected {total}")
        at = 0
        for p in params.values():
            p.data = payload[at:at + p.size].reshape(p.shape).astype(p.data.dtype)
            at += p.size

    def flat_parameters(self):
        params = self.parameters()
        return np.concatenate([p.data.reshape(-1) for p in params.values()])


# leaky_relu slope used across all models
SLOPE = 0.2


def he_normal(rng, shape, fan_in):
    # gain for leaky_relu(0.2)
    std = np.sqrt(2.0 / (fan_in * (1.0 + SLOPE ** 2)))
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.w = self.param("w", he_normal(rng, (n_in, n_out), n_in))
        self.b = self.param("b", np.zeros(n_out) if bias is None else np.asarray(bias, dtype=float))

    def __call__(self, x):
        return ops.add(ops.matmul(x, self.w), self.b)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None):
        super().__init__()
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.w = self.param("w", he_normal(rng, (cout, cin, k, k), cin * k * k))
        self.b = self.param("b", np.zeros(cout))

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)
