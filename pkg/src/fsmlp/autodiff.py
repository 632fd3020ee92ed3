"""Minimal define-by-run reverse-mode differentiation over numpy arrays.

Every operation returns a new :class:`Node` holding its value and a closure
that maps the upstream gradient to gradients for its parents. The graph is
rebuilt on each forward pass. All values are float64.

Leaf nodes accumulate into ``.grad``; calling :meth:`Node.backward` twice
without :meth:`Node.zero_grad` adds the second gradient to the first.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DIV_GUARD = 1e-30

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericGuardError(ArithmeticError):
    """A numeric guard fired (near-zero denominator, NaN, overflow)."""


class Node:
    """A value in the computation graph.

    Parameters
    ----------
    value : array_like
        Data, converted to a float64 array.
    requires_grad : bool
        Mark as a trainable leaf. Interior nodes inherit this from parents.
    """

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: tuple = (), backward: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.parents = parents
        self._backward = backward
        self.name = name
        self.grad = np.zeros_like(self.value) if requires_grad and not parents else None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Node(shape={self.shape}{label})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def backward(self, grad=None):
        """Propagate gradients from this node to every reachable leaf."""
        if grad is None:
            if self.value.size != 1:
                raise DimensionError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.value)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise DimensionError(f"seed gradient shape {grad.shape} != node shape {self.shape}")

        order = _topological_order(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.value)
                node.grad += g
                continue
            for parent, pg in zip(node.parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _topological_order(root: Node) -> list:
    order, seen = [], set()
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
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Node(a.value + b.value, parents=(a, b), backward=backward)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Node(a.value - b.value, parents=(a, b), backward=backward)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Node(a.value * b.value, parents=(a, b), backward=backward)


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a, b, "div")
    if np.any(np.abs(b.value) < DIV_GUARD):
        raise NumericGuardError(f"div: |denominator| < {DIV_GUARD:g}")
    out = a.value / b.value

    def backward(g):
        ga = _unbroadcast(g / b.value, a.shape)
        gb = _unbroadcast(-g * out / b.value, b.shape)
        return ga, gb

    return Node(out, parents=(a, b), backward=backward)


def abs_(x) -> Node:
    """|x| with subgradient 0 at exactly 0."""
    x = as_node(x)
    sign = np.sign(x.value)
    return Node(np.abs(x.value), parents=(x,), backward=lambda g: (g * sign,))


def log1p_abs(x) -> Node:
    """log(|x| + 1); derivative sign(x) / (|x| + 1)."""
    x = as_node(x)
    a = np.abs(x.value)
    local = np.sign(x.value) / (a + 1.0)
    return Node(np.log1p(a), parents=(x,), backward=lambda g: (g * local,))


def square(x) -> Node:
    x = as_node(x)
    return Node(x.value * x.value, parents=(x,), backward=lambda g: (2.0 * g * x.value,))


def relu(x) -> Node:
    x = as_node(x)
    mask = (x.value > 0).astype(np.float64)
    return Node(x.value * mask, parents=(x,), backward=lambda g: (g * mask,))


def gelu(x) -> Node:
    """Exact (erf) GELU."""
    x = as_node(x)
    cdf = 0.5 * (1.0 + erf(x.value / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.value * x.value)
    local = cdf + x.value * pdf
    return Node(x.value * cdf, parents=(x,), backward=lambda g: (g * local,))


ACTIVATIONS = {"gelu": gelu, "relu": relu}


def activation(kind: str) -> Callable[[Node], Node]:
    try:
        return ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None


ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "div": div,
    "abs": abs_, "log1p_abs": log1p_abs, "square": square,
    "relu": relu, "gelu": gelu,
}


def elementwise(op_kind: str, *inputs) -> Node:
    """Dispatch an elementwise op by name."""
    try:
        fn = ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*inputs)


# --- reductions ------------------------------------------------------------

def _normalize_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(axes)
    if not axes:
        raise DimensionError("reduction over an empty axis list")
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d input")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum_(x, axes=None, keepdims: bool = True) -> Node:
    x = as_node(x)
    axes = _normalize_axes(axes, x.ndim)
    out = x.value.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Node(out, parents=(x,), backward=backward)


def mean(x, axes=None, keepdims: bool = True) -> Node:
    x = as_node(x)
    axes = _normalize_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise DimensionError("mean over zero elements")
    return mul(sum_(x, axes, keepdims), 1.0 / count)


def reduce(op_kind: str, x, axes=None, keepdims: bool = True) -> Node:
    if op_kind == "sum":
        return sum_(x, axes, keepdims)
    if op_kind == "mean":
        return mean(x, axes, keepdims)
    raise ValueError(f"unknown reduction {op_kind!r}")


# --- linear algebra --------------------------------------------------------

def matmul(a, b) -> Node:
    """Batched matrix product; ``b`` may be unbatched (K, N) and is broadcast."""
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} differ")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
        gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
        return ga, _unbroadcast(gb, b.shape)

    return Node(np.matmul(a.value, b.value), parents=(a, b), backward=backward)


def fixed_linear_map(x, matrix: np.ndarray) -> Node:
    """Apply a constant square ``matrix`` along the last axis: y = x @ matrix.T."""
    x = as_node(x)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"fixed_linear_map: matrix must be square, got {matrix.shape}")
    if x.shape[-1] != matrix.shape[1]:
        raise DimensionError(
            f"fixed_linear_map: trailing dim {x.shape[-1]} != matrix size {matrix.shape[1]}")
    return Node(x.value @ matrix.T, parents=(x,), backward=lambda g: (g @ matrix,))


def swapaxes(x, axis1: int, axis2: int) -> Node:
    x = as_node(x)
    out = np.swapaxes(x.value, axis1, axis2)
    return Node(out, parents=(x,), backward=lambda g: (np.swapaxes(g, axis1, axis2),))


# --- gradient checking -----------------------------------------------------

def numerical_gradient(f: Callable[[], float], param: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + h
        up = f()
        param[idx] = orig - h
        down = f()
        param[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def gradcheck(loss_fn: Callable[[], Node], params: Sequence[Node] | Iterable[Node],
              h: float = 1e-5, rtol: float = 1e-5, atol: float = 1e-8) -> float:
    """Compare backward() against central differences for every entry of ``params``.

    ``loss_fn`` must rebuild the graph from the current parameter values and
    return a scalar node. Returns the worst ``|a - n| / (atol + rtol * max(|a|, |n|))``
    ratio; values <= 1 pass. Raises AssertionError on failure.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, ga in zip(params, analytic):
        gn = numerical_gradient(lambda: float(loss_fn().value.sum()), p.value, h)
        scale = atol + rtol * np.maximum(np.abs(ga), np.abs(gn))
        ratio = float(np.max(np.abs(ga - gn) / scale)) if ga.size else 0.0
        if ratio > 1.0:
            raise AssertionError(
                f"gradcheck failed for {p.name or p.shape}: max |analytic - numeric| = "
                f"{np.max(np.abs(ga - gn)):.3e}")
        worst = max(worst, ratio)
    return worst
