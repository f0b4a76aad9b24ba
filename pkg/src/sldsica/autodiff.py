"""Minimal reverse-mode gradient tape over float64 numpy arrays.

The tape supports exactly the primitives the training objective needs:
affine maps, tanh/ReLU/softplus, elementwise arithmetic, reductions and
column slicing.  Nodes are recorded in creation order, which is already a
topological order, so the backward pass is a single reverse sweep.

A ``Tape`` is single-threaded during record/backward; independent tapes can
run in parallel.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import NonScalarOutput

ArrayLike = Union[np.ndarray, float, int]


class Node:
    """One recorded value plus the local vjp rules feeding its parents."""

    __slots__ = ("tape", "value", "parents", "vjps", "grad", "needs_grad")

    def __init__(
        self,
        tape: "Tape",
        value: np.ndarray,
        parents: Sequence["Node"] = (),
        vjps: Sequence[Callable[[np.ndarray], np.ndarray]] = (),
        needs_grad: Optional[bool] = None,
    ):
        self.tape = tape
        self.value = value
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in self.parents)
        self.needs_grad = needs_grad
        self.grad: Optional[np.ndarray] = None
        tape._nodes.append(self)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(self.tape, other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(self.tape, other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Records a computation so that backward() can replay it in reverse."""

    def __init__(self):
        self._nodes: list[Node] = []

    def var(self, value: ArrayLike) -> Node:
        """Register a trainable leaf; gradients flow into it."""
        return Node(self, np.asarray(value, dtype=np.float64), needs_grad=True)

    def __len__(self):
        return len(self._nodes)


def _wrap(tape: Tape, x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(tape, np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def add(a: Node, b) -> Node:
    b = _wrap(a.tape, b)
    return Node(
        a.tape,
        a.value + b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(g, b.value.shape),
        ),
    )


def sub(a: Node, b) -> Node:
    b = _wrap(a.tape, b)
    return Node(
        a.tape,
        a.value - b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(-g, b.value.shape),
        ),
    )


def mul(a: Node, b) -> Node:
    b = _wrap(a.tape, b)
    return Node(
        a.tape,
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a: Node, b) -> Node:
    b = _wrap(a.tape, b)
    return Node(
        a.tape,
        a.value / b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.value, a.value.shape),
            lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def neg(a: Node) -> Node:
    return Node(a.tape, -a.value, (a,), (lambda g: -g,))


def matmul(a: Node, b) -> Node:
    b = _wrap(a.tape, b)
    return Node(
        a.tape,
        a.value @ b.value,
        (a, b),
        (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def transpose(a: Node) -> Node:
    return Node(a.tape, a.value.T, (a,), (lambda g: g.T,))


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)
    return Node(a.tape, out, (a,), (lambda g: g * (1.0 - out * out),))


def relu(a: Node) -> Node:
    mask = a.value > 0.0
    return Node(a.tape, a.value * mask, (a,), (lambda g: g * mask,))


def softplus(a: Node) -> Node:
    # stable: log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    out = np.maximum(a.value, 0.0) + np.log1p(np.exp(-np.abs(a.value)))
    sig = 1.0 / (1.0 + np.exp(-a.value))
    return Node(a.tape, out, (a,), (lambda g: g * sig,))


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return Node(a.tape, out, (a,), (lambda g: g * out,))


def log(a: Node) -> Node:
    return Node(a.tape, np.log(a.value), (a,), (lambda g: g / a.value,))


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)
    return Node(a.tape, out, (a,), (lambda g: g * 0.5 / out,))


def square(a: Node) -> Node:
    return mul(a, a)


def nsum(a: Node, axis=None) -> Node:
    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        expand = np.expand_dims(g, axis)
        return np.broadcast_to(expand, a.value.shape).copy()

    return Node(a.tape, np.sum(a.value, axis=axis), (a,), (vjp,))


def getcols(a: Node, start: int, stop: int) -> Node:
    """Slice columns [start, stop) of a 2-D node."""

    def vjp(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return full

    return Node(a.tape, a.value[:, start:stop], (a,), (vjp,))


def leaky_tanh(a: Node) -> Node:
    """tanh(x) + 0.1 x; smooth, strictly increasing, unbounded."""
    return add(tanh(a), mul(a, 0.1))


def gaussian_logpdf_diag(x: np.ndarray, mean: Node, log_var: Node) -> Node:
    """Sum of log N(x; mean, diag(exp(log_var))) over all entries.

    ``x`` is observed data (constant); ``log_var`` broadcasts against rows.
    """
    resid = sub(_wrap(mean.tape, x), mean)
    var = exp(log_var)
    quad = div(mul(resid, resid), var)
    n_rows = x.shape[0] if x.ndim == 2 else 1
    const = -0.5 * np.log(2.0 * np.pi) * x.size
    return add(
        mul(add(nsum(quad), mul(nsum(log_var), float(n_rows))), -0.5), const
    )


def backward(tape: Tape, output: Node) -> None:
    """Accumulate d(output)/d(node) into ``node.grad`` for every node.

    ``output`` must be scalar (size 1).  Adjoints are reset on every call,
    so repeated backward passes do not accumulate across calls.  Nodes the
    output does not depend on end with zero gradients.
    """
    if output.value.size != 1:
        raise NonScalarOutput(
            f"backward needs a scalar output, got shape {output.value.shape}"
        )
    # reset, then materialize lazily; constants never receive gradients
    for node in tape._nodes:
        node.grad = None
    output.grad = np.ones_like(output.value)
    for node in reversed(tape._nodes):
        g = node.grad
        if g is None or not node.parents:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.needs_grad:
                continue
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib
    for node in tape._nodes:
        if node.grad is None and node.needs_grad:
            node.grad = np.zeros_like(node.value)
