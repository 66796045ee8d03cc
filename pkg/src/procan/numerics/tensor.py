"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure that pushes the output gradient back to them.
:func:`backward` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError, UsageError

DTYPE = np.float64


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        op: str = "",
        name: str = "",
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward: Callable[[], None] | None = None
        self.op = op
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    # -- graph construction helpers ---------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE)  # copy: g may be a broadcast view
        else:
            self.grad += g

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other) -> "Tensor":
        return add(as_tensor(other), neg(self))

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other) -> "Tensor":
        from .ops import matmul

        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int = -1, b: int = -2) -> "Tensor":
        return swapaxes(self, a, b)

    @property
    def mT(self) -> "Tensor":
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str = "") -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(np.array(data, dtype=DTYPE, copy=True), requires_grad=True, name=name)


def make_result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), op=op)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise and structural primitives ---------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = make_result(a.data + b.data, (a, b), "add")
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc

    def _backward():
        if a.requires_grad:
            a._accumulate(unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(out.grad, b.shape))

    out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = make_result(a.data * b.data, (a, b), "mul")
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc

    def _backward():
        if a.requires_grad:
            a._accumulate(unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(out.grad * a.data, b.shape))

    out._backward = _backward
    return out


def neg(a: Tensor) -> Tensor:
    out = make_result(-a.data, (a,), "neg")

    def _backward():
        a._accumulate(-out.grad)

    out._backward = _backward
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    out = make_result(data, (a,), "reshape")

    def _backward():
        a._accumulate(out.grad.reshape(a.shape))

    out._backward = _backward
    return out


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = make_result(np.swapaxes(a.data, ax1, ax2), (a,), "swapaxes")

    def _backward():
        a._accumulate(np.swapaxes(out.grad, ax1, ax2))

    out._backward = _backward
    return out


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = make_result(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def _backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    out._backward = _backward
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``mask`` is true and ``b`` elsewhere (mask is a constant)."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = make_result(np.where(mask, a.data, b.data), (a, b), "where")
    except ValueError as exc:
        raise DimensionError(f"cannot select between shapes {a.shape} and {b.shape}") from exc

    def _backward():
        if a.requires_grad:
            a._accumulate(unbroadcast(np.where(mask, out.grad, 0.0), a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(np.where(mask, 0.0, out.grad), b.shape))

    out._backward = _backward
    return out


# -- the reverse sweep ---------------------------------------------------------
def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, every node after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Backpropagate from a scalar ``loss``.

    Gradients are written to ``.grad`` of every node in the graph (replacing
    whatever was there). When ``params`` is given, their gradients are also
    returned in order, with zeros for parameters the loss does not reach.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
    # intermediate buffers are no longer needed
    for node in order:
        if node._parents:
            node._backward = None
    if params is None:
        return None
    reached = {id(n) for n in order}
    grads = []
    for p in params:
        if id(p) not in reached or p.grad is None:
            p.grad = np.zeros_like(p.data)
        grads.append(p.grad)
    return grads
