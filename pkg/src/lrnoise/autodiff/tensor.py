"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tensor` records the op that produced it, its parents and a
backward rule mapping the output gradient to parent gradients. Creation
order gives a topological index; :func:`backward` walks nodes in reverse
creation order, so gradient accumulation order is fixed and runs are
bitwise reproducible.
"""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

_counter = itertools.count()


class DimensionError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_index",
                 "_consumed", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple["Tensor", ...] = (), backward: BackwardFn | None = None):
        if isinstance(data, np.ndarray):
            # read-only view: the caller keeps write access to its own buffer
            arr = data.astype(np.float64, copy=False).view()
        else:
            arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward
        self._index = next(_counter)
        self._consumed = False

    # -- introspection -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{rg})"

    # -- operators (implemented in ops) --------------------------------------
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
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Create an op output; the graph edge is only recorded if a parent needs gradients."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, op=op, parents=tuple(parents), backward=backward)
    return Tensor(data, op=op)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward pass; rebuild it")
    if not loss.requires_grad:
        raise GraphError("loss is detached: no operand requires gradients")

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._index in nodes:
            continue
        nodes[node._index] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads: dict[int, np.ndarray] = {loss._index: np.ones(loss.shape)}
    for idx in sorted(nodes, reverse=True):
        node = nodes[idx]
        g = grads.pop(idx, None)
        if node._consumed:
            raise GraphError(f"node {node.op} was freed by an earlier backward pass")
        if node._backward is None:
            if g is not None and node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise DimensionError(
                        f"{node.op}: backward produced {pg.shape} for operand {parent.shape}")
                prev = grads.get(parent._index)
                grads[parent._index] = pg if prev is None else prev + pg
        node._backward = None
        node._parents = ()
        node._consumed = True
    loss._consumed = True
