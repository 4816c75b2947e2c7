"""Reverse-mode autodiff over numpy arrays.

A `Tensor` wraps an ndarray plus the closure needed to propagate gradients
back to its parents. Graphs are built eagerly by the op functions in
`ddep.nn.ops` and torn down after each training step; nothing is retained
between steps.

Arrays are float32 by default (the training dtype). Ops preserve the dtype
of their inputs, which lets the gradient checker rerun a model in float64
without a separate code path.
"""

from __future__ import annotations

import os

import numpy as np

from ddep.errors import InvalidArgumentError

DEFAULT_DTYPE = np.float32

# When enabled, every op output is checked for NaN/Inf at construction time.
CHECK_FINITE = os.environ.get("DDEP_CHECK_FINITE", "0") == "1"


class Tensor:
    """A node in the autodiff graph.

    `_vjp` maps the output gradient to a tuple of parent gradients (entries
    may be None for parents that do not require grad).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None):
        if not isinstance(data, np.ndarray):
            if isinstance(data, np.generic):
                # numpy scalar (e.g. from reducing a 0-d array): keep dtype
                data = np.asarray(data)
            else:
                data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = data
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = tuple(parents)
        self._vjp = vjp
        if CHECK_FINITE and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite values in op output")

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise InvalidArgumentError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )

        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g
            # Interior gradients are not needed once consumed.
            if node is not self:
                node.grad = None


def _toposort(root):
    """Iterative DFS postorder over nodes that require grad."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def as_tensor(x, dtype=None):
    """Wrap an array (or pass through a Tensor) as a constant graph leaf."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr)


def make_op(data, parents, vjp):
    """Build an op output node; grad tracking is dropped when unneeded."""
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, parents=parents, vjp=vjp if requires else None)
