"""Reverse-mode automatic differentiation core.

A `Tensor` wraps a dense numpy array.  Operations (see `gat.ops`) record
parent links and a backward closure on their outputs; `backward` walks the
resulting graph once, in reverse topological order, accumulating adjoints
additively across fan-out.  A graph is consumed by the backward pass and
cannot be traversed twice.

Tensors without a node id (constants, detached values) are immutable values
as far as the graph is concerned and are safe to share between threads.
Graph construction and backward are single-threaded per graph.
"""

import contextlib
import itertools

import numpy as np

from . import precision
from .errors import GraphError, NonFiniteError

_node_counter = itertools.count(1)
_grad_enabled = True


def grad_enabled():
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None, copy=True, check_finite=True):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=dtype or precision.dtype(), copy=copy)
        if check_finite and not np.all(np.isfinite(arr)):
            raise NonFiniteError(
                f"non-finite values entering the graph (shape {arr.shape})"
            )
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = next(_node_counter) if self.requires_grad else None
        self._parents = ()
        self._backward = None
        self._consumed = False

    # -- construction used by ops: no copy, no finite scan, inherits dtype --
    @classmethod
    def _result(cls, data, parents, backward_fn):
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t._consumed = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t.node_id = next(_node_counter)
            t._parents = tuple(parents)
            t._backward = backward_fn
        else:
            t.requires_grad = False
            t.node_id = None
            t._parents = ()
            t._backward = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        """Same values, off the graph."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t.node_id = None
        t._parents = ()
        t._backward = None
        t._consumed = False
        return t

    def is_leaf(self):
        return self._backward is None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar; implementations live in gat.ops --
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _topo_order(root):
    """Iterative reverse-topological ordering of the graph below `root`."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, wrt=None):
    """Run the adjoint pass from a scalar loss.

    Returns a dict mapping each requested tensor (default: every reachable
    leaf with requires_grad) to its gradient tensor.  Also populates `.grad`
    (as an ndarray) on reachable requires_grad leaves.  The graph is consumed:
    a second backward through any of its nodes raises GraphError.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor loss")
    if loss.size != 1:
        raise GraphError(f"loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any differentiable input")
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError("loss is non-finite")

    order = _topo_order(loss)
    for node in order:
        if node._consumed:
            raise GraphError("graph already consumed by a previous backward")
    on_graph = {id(n) for n in order}

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        if node._backward is None:
            continue  # leaf or constant: keep any accumulated grad for collection
        g = grads.pop(id(node), None)
        if g is None:
            continue  # zero adjoint (e.g. downstream of sign); nothing to propagate
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                # closures may hand the same array to several parents (e.g.
                # add passes its adjoint through twice), so never += in place
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg

    # consume the graph and release saved activations; leaves stay live so
    # parameters can participate in later graphs
    for node in order:
        if node._backward is not None:
            node._consumed = True
            node._backward = None
            node._parents = ()

    for node in order:
        if node.is_leaf() and node.requires_grad:
            node.grad = grads.get(id(node), np.zeros_like(node.data))

    if wrt is None:
        targets = [n for n in order if n.is_leaf() and n.requires_grad]
    else:
        targets = list(wrt)
    out = {}
    for t in targets:
        if id(t) not in on_graph:
            raise GraphError("requested leaf is not on the graph of this loss")
        g = grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient leaving the graph")
        if g.shape != t.shape:
            raise GraphError(f"gradient shape {g.shape} != leaf shape {t.shape}")
        out[t] = Tensor._result(g, (), None)
    return out


def as_tensor(x, requires_grad=False):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=requires_grad)
