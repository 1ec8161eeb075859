"""Dense float64 tensors (rank <= 3) with reverse-mode autodiff.

Tensors wrap numpy arrays. Every differentiable op records its parents and
a backward closure; ``Tensor.backward()`` walks the graph once in a fixed
topological order, so gradient accumulation is deterministic for a given
graph. Forward results are treated as immutable.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not line up."""


_GRAD_ENABLED = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction (forward-only evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"rank {arr.ndim} > 3 not supported")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the named functions below do the work
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self) -> "Tensor":
        return tsum(self)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError("backward() root must be a scalar")
        topo = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; parent order is the op's construction order, so the
    # walk (and float accumulation order) is reproducible
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return topo


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim == 0 or b.data.ndim == 0 or a.data.ndim > 2 or b.data.ndim > 2:
        raise ShapeError("matmul: operands must be rank 1 or 2")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad  # dot product

    return _make(ad @ bd, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose: rank-2 only")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable two-sided form
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,))


def tsum(a: Tensor) -> Tensor:
    return _make(np.asarray(np.sum(a.data)), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_axis0(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("mean_axis0: rank-2 only")
    n = a.shape[0]
    return _make(a.data.mean(axis=0), (a,), lambda g: (np.tile(g / n, (n, 1)),))


def gather_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Rows a[idx]; repeated indices accumulate gradient."""
    if a.data.ndim != 2:
        raise ShapeError("gather_rows: rank-2 only")
    index = np.asarray(idx, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward)


def row(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("row: rank-2 only")

    def backward(g):
        out = np.zeros_like(a.data)
        out[i] = g
        return (out,)

    return _make(a.data[i].copy(), (a,), backward)


def take_vec(a: Tensor, idx: Sequence[int]) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError("take_vec: rank-1 only")
    index = np.asarray(idx, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward)


def pick(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError("pick: rank-1 only")

    def backward(g):
        out = np.zeros_like(a.data)
        out[i] = g
        return (out,)

    return _make(np.asarray(a.data[i]), (a,), backward)


def concat_vec(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError("concat_vec: rank-1 only")
    na = a.shape[0]
    return _make(np.concatenate([a.data, b.data]), (a, b), lambda g: (g[:na], g[na:]))


def hstack2(a: Tensor, b: Tensor) -> Tensor:
    """Column-wise concatenation of two rank-2 tensors with equal row counts."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"hstack2: shapes {a.shape}, {b.shape}")
    na = a.shape[1]
    return _make(np.hstack([a.data, b.data]), (a, b), lambda g: (g[:, :na], g[:, na:]))


def mul_rows(a: Tensor, row_mask: np.ndarray) -> Tensor:
    """Scale each row of a rank-2 tensor by a constant per-row factor."""
    if a.data.ndim != 2 or row_mask.shape != (a.shape[0],):
        raise ShapeError("mul_rows: mask must have one entry per row")
    m = np.asarray(row_mask, dtype=np.float64)[:, None]
    return _make(a.data * m, (a,), lambda g: (g * m,))


def stack_vec(scalars: Sequence[Tensor]) -> Tensor:
    """Assemble scalar tensors into a rank-1 tensor."""
    parts = list(scalars)
    if not parts:
        raise ShapeError("stack_vec: empty input")
    for p in parts:
        if p.data.size != 1:
            raise ShapeError("stack_vec: inputs must be scalars")
    data = np.array([p.data.reshape(()) for p in parts])

    def backward(g):
        return tuple(np.asarray(g[i]) for i in range(len(parts)))

    return _make(data, tuple(parts), backward)


def seq_sum(a: Tensor) -> Tensor:
    """Left-to-right sequential sum of a rank-1 tensor.

    numpy's pairwise summation rounds differently from a plain fold from
    n >= 8; score aggregation is defined as the sequential fold so it can
    be compared bit-for-bit against enumeration.
    """
    if a.data.ndim != 1:
        raise ShapeError("seq_sum: rank-1 only")
    total = 0.0
    for v in a.data:
        total += float(v)
    return _make(np.asarray(total), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def max_vec(a: Tensor) -> Tensor:
    """Maximum of a rank-1 tensor; gradient routed to the first argmax."""
    if a.data.ndim != 1 or a.shape[0] == 0:
        raise ShapeError("max_vec: non-empty rank-1 only")
    i = int(np.argmax(a.data))

    def backward(g):
        out = np.zeros_like(a.data)
        out[i] = g
        return (out,)

    return _make(np.asarray(a.data[i]), (a,), backward)
