"""A small tape-based reverse-mode differentiation engine.

Values are whole numpy arrays (one node per batched operation), so a training
step records a few hundred nodes rather than millions of scalars.

Losses in this package depend on first and second derivatives of network
outputs with respect to network *inputs*.  Instead of nesting reverse passes,
those input-directional derivatives are propagated forward in closed form
(tanh' = 1 - tanh^2, tanh'' = -2 tanh tanh') as ordinary tape nodes.  A single
reverse pass over the tape then yields exact parameter gradients of any loss
built from values, first and second directional derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np


class Op(NamedTuple):
    # forward(*input_values, **attrs) -> (value, cache)
    forward: Callable
    # vjp(g, inputs, out, cache, needs, **attrs) -> tuple of grads (None where not needed)
    vjp: Callable


OPS: dict[str, Op] = {}


def register_op(name: str, forward: Callable, vjp: Callable) -> None:
    if name in OPS:
        raise ValueError(f"op {name!r} already registered")
    OPS[name] = Op(forward, vjp)


class Node:
    __slots__ = ("op", "inputs", "attrs", "value", "cache", "requires_grad", "name")

    def __init__(self, op, inputs, attrs, value, cache, requires_grad, name=None):
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.value = value
        self.cache = cache
        self.requires_grad = requires_grad
        self.name = name


class Var:
    """Handle to a node on a tape; supports the usual arithmetic operators."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.apply("sub", self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.apply("sub", self._lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.apply("scale", self, c=float(other))
        return self.tape.apply("mul", self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.tape.apply("scale", self, c=-1.0)

    def __repr__(self):
        node = self.tape.nodes[self.index]
        return f"Var(#{self.index} {node.op} shape={node.value.shape})"


class Tape:
    """Ordered record of operations.

    ``nodes`` is topologically ordered by construction: an op can only consume
    nodes that already exist.  ``params`` maps parameter ids to node indices.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def param(self, name: str, value) -> Var:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already on tape")
        arr = np.array(value, dtype=float)
        var = self._push(Node("param", (), {}, arr, None, True, name))
        self.params[name] = var.index
        return var

    def const(self, value) -> Var:
        arr = np.asarray(value, dtype=float)
        return self._push(Node("const", (), {}, arr, None, False))

    def apply(self, op: str, *inputs: Var, **attrs) -> Var:
        fn = OPS[op]
        idx = tuple(v.index for v in inputs)
        vals = [self.nodes[i].value for i in idx]
        value, cache = fn.forward(*vals, **attrs)
        rg = any(self.nodes[i].requires_grad for i in idx)
        return self._push(Node(op, idx, attrs, value, cache, rg))

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves; returns the fresh values."""
        fresh: list[np.ndarray] = []
        for node in self.nodes:
            if not node.inputs and node.op in ("param", "const"):
                fresh.append(node.value.copy())
                continue
            value, _ = OPS[node.op].forward(*(fresh[i] for i in node.inputs), **node.attrs)
            fresh.append(value)
        return fresh

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradient of the scalar ``loss`` with respect to every parameter.

        Parameters the loss does not depend on get zero arrays.
        """
        if loss.tape is not self:
            raise ValueError("loss node belongs to another tape")
        root = self.nodes[loss.index]
        if root.value.size != 1:
            raise ValueError(f"loss must be scalar, got shape {root.value.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.index] = np.ones_like(root.value)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or not node.inputs or not node.requires_grad:
                continue
            needs = tuple(self.nodes[j].requires_grad for j in node.inputs)
            ins = [self.nodes[j].value for j in node.inputs]
            parts = OPS[node.op].vjp(g, ins, node.value, node.cache, needs, **node.attrs)
            for j, need, part in zip(node.inputs, needs, parts):
                if not need or part is None:
                    continue
                if grads[j] is None:
                    grads[j] = np.array(part, dtype=float, copy=True)
                else:
                    grads[j] += part
            if i != loss.index:
                grads[i] = None  # free intermediate
        out = {}
        for name, idx in self.params.items():
            g = grads[idx]
            out[name] = np.zeros_like(self.nodes[idx].value) if g is None else g
        return out


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    return tape.backward(loss)


# ---------------------------------------------------------------------------
# primitive ops


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _none(value):
    return value, None


register_op(
    "add",
    lambda a, b: _none(a + b),
    lambda g, ins, out, c, needs: (
        _unbroadcast(g, ins[0].shape) if needs[0] else None,
        _unbroadcast(g, ins[1].shape) if needs[1] else None,
    ),
)
register_op(
    "sub",
    lambda a, b: _none(a - b),
    lambda g, ins, out, c, needs: (
        _unbroadcast(g, ins[0].shape) if needs[0] else None,
        _unbroadcast(-g, ins[1].shape) if needs[1] else None,
    ),
)
register_op(
    "mul",
    lambda a, b: _none(a * b),
    lambda g, ins, out, c, needs: (
        _unbroadcast(g * ins[1], ins[0].shape) if needs[0] else None,
        _unbroadcast(g * ins[0], ins[1].shape) if needs[1] else None,
    ),
)
register_op(
    "scale",
    lambda a, c: _none(c * a),
    lambda g, ins, out, cache, needs, c: (c * g,),
)
register_op(
    "square",
    lambda a: _none(a * a),
    lambda g, ins, out, c, needs: (2.0 * ins[0] * g,),
)
register_op(
    "tanh",
    lambda a: _none(np.tanh(a)),
    lambda g, ins, out, c, needs: (g * (1.0 - out * out),),
)
register_op(
    "one_minus_square",
    lambda h: _none(1.0 - h * h),
    lambda g, ins, out, c, needs: (-2.0 * ins[0] * g,),
)
register_op(
    "sum",
    lambda a: _none(np.asarray(a.sum())),
    lambda g, ins, out, c, needs: (np.broadcast_to(g, ins[0].shape),),
)
register_op(
    "mean",
    lambda a: _none(np.asarray(a.mean())),
    lambda g, ins, out, c, needs: (np.broadcast_to(g / ins[0].size, ins[0].shape),),
)


def _linear_fwd(x, w, b):
    return _none(x @ w.T + b)


def _linear_vjp(g, ins, out, c, needs):
    x, w, _ = ins
    return (
        g @ w if needs[0] else None,
        g.T @ x if needs[1] else None,
        g.sum(axis=0) if needs[2] else None,
    )


register_op("linear", _linear_fwd, _linear_vjp)


def _linear_nb_vjp(g, ins, out, c, needs):
    x, w = ins
    return (g @ w if needs[0] else None, g.T @ x if needs[1] else None)


register_op("linear_nobias", lambda x, w: _none(x @ w.T), _linear_nb_vjp)


def _column_vjp(g, ins, out, c, needs, j):
    full = np.zeros_like(ins[0])
    full[:, j] = g
    return (full,)


register_op("column", lambda x, j: _none(x[:, j].copy()), _column_vjp)


# sugar ---------------------------------------------------------------------


def tanh(x: Var) -> Var:
    return x.tape.apply("tanh", x)


def square(x: Var) -> Var:
    return x.tape.apply("square", x)


def sum_(x: Var) -> Var:
    return x.tape.apply("sum", x)


def mean(x: Var) -> Var:
    return x.tape.apply("mean", x)


def column(x: Var, j: int) -> Var:
    return x.tape.apply("column", x, j=int(j))


def mean_sq_norm(x: Var) -> Var:
    """Batch mean of squared row norms, ``mean_i ||x_i||^2``."""
    n = x.shape[0] if x.value.ndim > 0 else 1
    return sum_(square(x)) * (1.0 / n)


def linear(x: Var, w: Var, b: Var) -> Var:
    return x.tape.apply("linear", x, w, b)


# ---------------------------------------------------------------------------
# networks with input-directional derivatives


@dataclass
class DualState:
    """Network output with its first (and optionally second) directional
    derivative along one input direction.  Fields are tape handles."""

    value: Var
    d1: Var
    d2: Var | None = None


def _prepare_input(x, direction=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("input must be a vector or an (n, d) batch")
    if direction is None:
        return x, None
    u = np.asarray(direction, dtype=float)
    if u.shape[-1] != x.shape[1] or (u.ndim == 2 and u.shape[0] != x.shape[0]) or u.ndim > 2:
        raise ValueError(f"direction shape {u.shape} does not match input shape {x.shape}")
    return x, np.broadcast_to(u, x.shape)


def mlp_on_tape(layers: list[tuple[Var, Var]], x) -> Var:
    """tanh MLP with linear output recorded on the tape of ``layers``."""
    tape = layers[0][0].tape
    x, _ = _prepare_input(x)
    if x.shape[1] != layers[0][0].shape[1]:
        raise ValueError(f"input dim {x.shape[1]} != network input dim {layers[0][0].shape[1]}")
    h = tape.const(x)
    for k, (w, b) in enumerate(layers):
        a = linear(h, w, b)
        h = a if k == len(layers) - 1 else tanh(a)
    return h


def forward_with_input_derivatives(layers: list[tuple[Var, Var]], x, direction, order: int = 1) -> DualState:
    """Forward pass carrying d/ds net(x + s u) (and d^2/ds^2 when ``order=2``).

    ``x`` is a vector or an ``(n, d)`` batch, ``direction`` a vector (shared
    by every row) or an ``(n, d)`` array.  Everything is recorded on the tape
    so a later reverse pass differentiates through the derivatives too.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    tape = layers[0][0].tape
    x, u = _prepare_input(x, direction)
    if x.shape[1] != layers[0][0].shape[1]:
        raise ValueError(f"input dim {x.shape[1]} != network input dim {layers[0][0].shape[1]}")
    h = tape.const(x)
    h1 = tape.const(u)
    h2 = None  # second derivative of an affine input path is identically zero
    last = len(layers) - 1
    for k, (w, b) in enumerate(layers):
        a = linear(h, w, b)
        a1 = tape.apply("linear_nobias", h1, w)
        a2 = tape.apply("linear_nobias", h2, w) if h2 is not None else None
        if k == last:
            h, h1, h2 = a, a1, a2
            break
        h = tanh(a)
        s = tape.apply("one_minus_square", h)
        h1 = s * a1
        if order == 2:
            curv = (h * square(a1)) * -2.0
            h2 = s * (curv if a2 is None else a2 + curv)
    if order == 2 and h2 is None:
        h2 = tape.const(np.zeros_like(h.value))
    return DualState(h, h1, h2 if order == 2 else None)


def finite_difference_gradient(f: Callable[[np.ndarray], float], params, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function."""
    p = np.array(params, dtype=float)
    flat = p.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        fp = f(p)
        flat[i] = keep - h
        fm = f(p)
        flat[i] = keep
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(p.shape)
