"""Reverse-mode automatic differentiation over dense float64 arrays.

Execution is recording: every op on tracked tensors appends itself to the
implicit graph via parent links, so the recorded order is already
topological.  ``backward`` walks that graph once in reverse; ``Tape`` exposes
the linearized recording for inspection and deterministic replay.

Broadcasting is deliberately restricted to scalar-with-tensor.  Row-wise
combinations that a model actually needs (bias add, per-row scaling) are
their own named ops so that any other shape mismatch is an error.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager: ops executed inside build no graph."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array plus (optionally) a gradient buffer.

    Gradients accumulate across ``backward`` calls; call ``zero_grad``
    between optimizer steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_fwd", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._fwd: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    __float__ = item

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(op={self._op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(op: str, parents: tuple[Tensor, ...], data: np.ndarray,
            fwd: Callable, vjp: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
        out._fwd = fwd
        out._op = op
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} "
                         "(only scalar-tensor broadcasting is supported)")


def _reduce_if_scalar(g: np.ndarray, operand: Tensor) -> np.ndarray:
    # a scalar operand broadcast over the other; fold its gradient back down
    if _is_scalar(operand) and g.ndim > 0:
        return np.asarray(g.sum())
    return g


# elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    fwd = lambda xs: xs[0] + xs[1]

    def vjp(g, xs, out):
        return _reduce_if_scalar(g, a), _reduce_if_scalar(g, b)

    return _record("add", (a, b), fwd([a.data, b.data]), fwd, vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)
    fwd = lambda xs: xs[0] - xs[1]

    def vjp(g, xs, out):
        return _reduce_if_scalar(g, a), _reduce_if_scalar(-g, b)

    return _record("sub", (a, b), fwd([a.data, b.data]), fwd, vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)
    fwd = lambda xs: xs[0] * xs[1]

    def vjp(g, xs, out):
        return _reduce_if_scalar(g * xs[1], a), _reduce_if_scalar(g * xs[0], b)

    return _record("mul", (a, b), fwd([a.data, b.data]), fwd, vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("div", a, b)
    fwd = lambda xs: xs[0] / xs[1]

    def vjp(g, xs, out):
        ga = _reduce_if_scalar(g / xs[1], a)
        gb = _reduce_if_scalar(-g * xs[0] / (xs[1] * xs[1]), b)
        return ga, gb

    return _record("div", (a, b), fwd([a.data, b.data]), fwd, vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    fwd = lambda xs: -xs[0]
    return _record("neg", (a,), fwd([a.data]), fwd, lambda g, xs, out: (-g,))


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    fwd = lambda xs: xs[0] ** p

    def vjp(g, xs, out):
        return (g * p * xs[0] ** (p - 1.0),)

    return _record("pow", (a,), fwd([a.data]), fwd, vjp)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)

    def fwd(xs):
        x = np.atleast_1d(xs[0])
        # piecewise form avoids overflow of exp for large |x|
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out.reshape(np.shape(xs[0]))

    def vjp(g, xs, out):
        return (g * out * (1.0 - out),)

    return _record("sigmoid", (a,), fwd([a.data]), fwd, vjp)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    fwd = lambda xs: np.tanh(xs[0])

    def vjp(g, xs, out):
        return (g * (1.0 - out * out),)

    return _record("tanh", (a,), fwd([a.data]), fwd, vjp)


def relu(a) -> Tensor:
    """max(0, x) elementwise; subgradient at 0 is 0."""
    a = _as_tensor(a)
    fwd = lambda xs: np.maximum(xs[0], 0.0)

    def vjp(g, xs, out):
        return (g * (xs[0] > 0.0),)

    return _record("relu", (a,), fwd([a.data]), fwd, vjp)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    fwd = lambda xs: np.exp(xs[0])
    return _record("exp", (a,), fwd([a.data]), fwd, lambda g, xs, out: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    fwd = lambda xs: np.log(xs[0])
    return _record("log", (a,), fwd([a.data]), fwd, lambda g, xs, out: (g / xs[0],))


# linear algebra ----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ValueError(f"matmul: only 1-D/2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != (b.shape[0] if b.ndim >= 1 else None):
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    fwd = lambda xs: np.matmul(xs[0], xs[1])

    def vjp(g, xs, out):
        x, y = xs
        if x.ndim == 1 and y.ndim == 1:            # dot -> scalar
            return g * y, g * x
        if x.ndim == 2 and y.ndim == 2:
            return g @ y.T, x.T @ g
        if x.ndim == 2 and y.ndim == 1:            # (m,k)@(k,) -> (m,)
            return np.outer(g, y), x.T @ g
        return y @ g, np.outer(x, g)               # (k,)@(k,n) -> (n,)

    return _record("matmul", (a, b), fwd([a.data, b.data]), fwd, vjp)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose: expected 2-D, got shape {a.shape}")
    fwd = lambda xs: xs[0].T.copy()
    return _record("transpose", (a,), fwd([a.data]), fwd, lambda g, xs, out: (g.T,))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    fwd = lambda xs: xs[0].reshape(shape)

    def vjp(g, xs, out):
        return (g.reshape(xs[0].shape),)

    return _record("reshape", (a,), fwd([a.data]), fwd, vjp)


# reductions --------------------------------------------------------

def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    fwd = lambda xs: np.asarray(xs[0].sum())

    def vjp(g, xs, out):
        return (np.broadcast_to(g, xs[0].shape).copy(),)

    return _record("sum_all", (a,), fwd([a.data]), fwd, vjp)


def sum_rows(a) -> Tensor:
    """Row sums of a matrix: (m, n) -> (m,)."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"sum_rows: expected 2-D, got shape {a.shape}")
    fwd = lambda xs: xs[0].sum(axis=1)

    def vjp(g, xs, out):
        return (np.broadcast_to(g[:, None], xs[0].shape).copy(),)

    return _record("sum_rows", (a,), fwd([a.data]), fwd, vjp)


def max_all(a) -> Tensor:
    """Global maximum; gradient flows to the first max element (row-major)."""
    a = _as_tensor(a)
    fwd = lambda xs: np.asarray(xs[0].max())

    def vjp(g, xs, out):
        buf = np.zeros_like(xs[0])
        buf.flat[int(xs[0].argmax())] = g
        return (buf,)

    return _record("max_all", (a,), fwd([a.data]), fwd, vjp)


# structured ops ----------------------------------------------------

def add_bias(mat, bias) -> Tensor:
    """Add a length-n vector to every row of an (m, n) matrix."""
    mat, bias = _as_tensor(mat), _as_tensor(bias)
    if mat.ndim != 2 or bias.ndim != 1 or mat.shape[1] != bias.shape[0]:
        raise ValueError(f"add_bias: incompatible shapes {mat.shape} and {bias.shape}")
    fwd = lambda xs: xs[0] + xs[1][None, :]

    def vjp(g, xs, out):
        return g, g.sum(axis=0)

    return _record("add_bias", (mat, bias), fwd([mat.data, bias.data]), fwd, vjp)


def scale_rows(mat, scale) -> Tensor:
    """Multiply row i of an (m, n) matrix by scale[i]."""
    mat, scale = _as_tensor(mat), _as_tensor(scale)
    if mat.ndim != 2 or scale.ndim != 1 or mat.shape[0] != scale.shape[0]:
        raise ValueError(f"scale_rows: incompatible shapes {mat.shape} and {scale.shape}")
    fwd = lambda xs: xs[0] * xs[1][:, None]

    def vjp(g, xs, out):
        return g * xs[1][:, None], (g * xs[0]).sum(axis=1)

    return _record("scale_rows", (mat, scale), fwd([mat.data, scale.data]), fwd, vjp)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one per row."""
    vectors = tuple(_as_tensor(v) for v in vectors)
    if not vectors:
        raise ValueError("stack_rows: empty input")
    if any(v.ndim != 1 or v.shape != vectors[0].shape for v in vectors):
        raise ValueError("stack_rows: all inputs must be 1-D of equal length")
    fwd = lambda xs: np.stack(xs)

    def vjp(g, xs, out):
        return tuple(g[i] for i in range(len(xs)))

    return _record("stack_rows", vectors, fwd([v.data for v in vectors]), fwd, vjp)


def take_rows(mat, indices) -> Tensor:
    """Gather rows of a matrix: out[i] = mat[indices[i]]."""
    mat = _as_tensor(mat)
    idx = np.asarray(indices, dtype=np.intp)
    if mat.ndim != 2 or idx.ndim != 1:
        raise ValueError(f"take_rows: expected 2-D matrix and 1-D indices, got {mat.shape}")
    fwd = lambda xs: xs[0][idx]

    def vjp(g, xs, out):
        buf = np.zeros_like(xs[0])
        np.add.at(buf, idx, g)
        return (buf,)

    return _record("take_rows", (mat,), fwd([mat.data]), fwd, vjp)


def take_per_row(mat, cols) -> Tensor:
    """Pick one entry per row: out[i] = mat[i, cols[i]]."""
    mat = _as_tensor(mat)
    cols = np.asarray(cols, dtype=np.intp)
    if mat.ndim != 2 or cols.shape != (mat.shape[0],):
        raise ValueError(f"take_per_row: need one column index per row of {mat.shape}")
    rows = np.arange(mat.shape[0])
    fwd = lambda xs: xs[0][rows, cols]

    def vjp(g, xs, out):
        buf = np.zeros_like(xs[0])
        buf[rows, cols] = g
        return (buf,)

    return _record("take_per_row", (mat,), fwd([mat.data]), fwd, vjp)


def log_softmax(mat) -> Tensor:
    """Row-wise log softmax of an (m, n) matrix, numerically stable."""
    mat = _as_tensor(mat)
    if mat.ndim != 2:
        raise ValueError(f"log_softmax: expected 2-D, got shape {mat.shape}")

    def fwd(xs):
        x = xs[0]
        shifted = x - x.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def vjp(g, xs, out):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return _record("log_softmax", (mat,), fwd([mat.data]), fwd, vjp)


# graph walk --------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order  # parents precede consumers


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every tracked tensor.

    The loss must be a scalar (size-1) node.  Gradients add onto whatever is
    already in .grad; call zero_grad between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    buf: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = buf.get(id(node))
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g, [p.data for p in node._parents], node.data)
        for parent, pg in zip(node._parents, parent_grads):
            slot = buf.get(id(parent))
            buf[id(parent)] = pg.copy() if slot is None else slot + pg
    for node in order:
        if node.requires_grad and id(node) in buf:
            g = buf[id(node)]
            node.grad = g.copy() if node.grad is None else node.grad + g


@dataclass
class TapeNode:
    tensor: Tensor
    op: str
    inputs: tuple[int, ...]  # positions of parents within Tape.nodes


class Tape:
    """Linearized recording of the graph below a root tensor.

    Nodes are in topological order (every node's inputs precede it), so the
    whole computation can be re-run front to back.
    """

    def __init__(self, nodes: list[TapeNode]):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order = _topo_order(root)
        pos = {id(t): i for i, t in enumerate(order)}
        nodes = [TapeNode(t, t._op, tuple(pos[id(p)] for p in t._parents)) for t in order]
        return cls(nodes)

    def replay(self) -> np.ndarray:
        """Re-run every recorded op from leaf data; returns the root value."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.tensor._fwd is None:
                values.append(node.tensor.data)
            else:
                values.append(node.tensor._fwd([values[i] for i in node.inputs]))
        return values[-1]
