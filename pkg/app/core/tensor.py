"""
Dense 2-D tensors with reverse-mode automatic differentiation.

Every operation returns a new Tensor. When any operand requires gradients
the result remembers its operands and a backward rule; ``backward`` walks
the resulting tape in reverse topological order. Batches are rows, values
are float64 throughout, and tracked tensors are never mutated in place.
"""
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.errors import ContractError, DimensionError, DomainError

Number = Union[int, float]
Operand = Union["Tensor", Number, np.ndarray]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording for the current thread (frozen-model inference)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """Dense rows x cols float64 matrix that can take part in a gradient tape."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ContractError(f"Tensor must be 2-D, got {arr.ndim} dimensions")
        self.values: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""

    # --- construction -------------------------------------------------

    @classmethod
    def zeros(cls, rows: int, cols: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros((rows, cols)), requires_grad=requires_grad)

    @classmethod
    def ones(cls, rows: int, cols: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.ones((rows, cols)), requires_grad=requires_grad)

    @staticmethod
    def _result(values: np.ndarray, parents: Tuple["Tensor", ...], op: str, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.values = values
        out.grad = None
        out._op = op
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # --- shape --------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.rows}x{self.cols}")
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        return f"Tensor({self.rows}x{self.cols}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    # --- operators ----------------------------------------------------

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(_lift(other), self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(_lift(other), self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(_lift(other), self)

    def __truediv__(self, other: Operand) -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def square(self) -> "Tensor":
        return square(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def sum_rows(self) -> "Tensor":
        return sum_rows(self)

    def cols_slice(self, start: int, stop: int) -> "Tensor":
        return slice_cols(self, start, stop)

    def backward(self) -> None:
        backward(self)


def _lift(x: Operand) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Sum a gradient over the axes an operand was broadcast along."""
    for axis in (0, 1):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    for axis in (0, 1):
        m, n = a.shape[axis], b.shape[axis]
        if m != n and m != 1 and n != 1:
            raise DimensionError(op, a.shape, b.shape)


# --- binary elementwise ----------------------------------------------

def add(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.values + b.values, (a, b), "add", _backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.values - b.values, (a, b), "sub", _backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)

    def _backward(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return Tensor._result(a.values * b.values, (a, b), "mul", _backward)


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a, b)
    if np.any(b.values == 0):
        raise DomainError("div: division by zero")
    out = a.values / b.values

    def _backward(g):
        return _unbroadcast(g / b.values, a.shape), _unbroadcast(-g * out / b.values, b.shape)

    return Tensor._result(out, (a, b), "div", _backward)


# --- unary elementwise -----------------------------------------------

def neg(a: Tensor) -> Tensor:
    return Tensor._result(-a.values, (a,), "neg", lambda g: (-g,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return Tensor._result(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return Tensor._result(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.values <= 0):
        raise DomainError("log: input has non-positive entries")
    return Tensor._result(np.log(a.values), (a,), "log", lambda g: (g / a.values,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.values <= 0):
        raise DomainError("sqrt: input has non-positive entries")
    out = np.sqrt(a.values)
    return Tensor._result(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def square(a: Tensor) -> Tensor:
    return Tensor._result(a.values * a.values, (a,), "square", lambda g: (g * 2.0 * a.values,))


_UNARY = {"neg": neg, "tanh": tanh, "exp": exp, "log": log, "sqrt": sqrt, "square": square}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a: Tensor, b: Optional[Operand] = None) -> Tensor:
    """Apply a named elementwise operation."""
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"{op} takes a single operand")
        return _UNARY[op](a)
    raise ContractError(f"unknown elementwise op '{op}'")


# --- linear algebra and reductions -----------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError("matmul", a.shape, b.shape)

    def _backward(g):
        return g @ b.values.T, a.values.T @ g

    return Tensor._result(a.values @ b.values, (a, b), "matmul", _backward)


def transpose(a: Tensor) -> Tensor:
    return Tensor._result(a.values.T.copy(), (a,), "transpose", lambda g: (g.T,))


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor._result(
        np.array([[a.values.sum()]]), (a,), "sum", lambda g: (np.full(shape, g[0, 0]),)
    )


def tensor_mean(a: Tensor) -> Tensor:
    shape = a.shape
    n = a.values.size
    return Tensor._result(
        np.array([[a.values.mean()]]), (a,), "mean", lambda g: (np.full(shape, g[0, 0] / n),)
    )


def sum_rows(a: Tensor) -> Tensor:
    """Per-row sum, rows x 1."""
    cols = a.cols
    return Tensor._result(
        a.values.sum(axis=1, keepdims=True), (a,), "sum_rows", lambda g: (np.repeat(g, cols, axis=1),)
    )


_REDUCE = {"sum": tensor_sum, "mean": tensor_mean, "sum_rows": sum_rows}


def reduce(op: str, a: Tensor) -> Tensor:
    """Apply a named reduction."""
    if op not in _REDUCE:
        raise ContractError(f"unknown reduction '{op}'")
    return _REDUCE[op](a)


# --- column plumbing -------------------------------------------------

def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= a.cols:
        raise DimensionError(f"slice_cols[{start}:{stop}]", a.shape)
    shape = a.shape

    def _backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return Tensor._result(a.values[:, start:stop].copy(), (a,), "slice_cols", _backward)


def take_cols(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather columns; ``index`` must be a permutation or selection without repeats."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or (index.size and (index.min() < 0 or index.max() >= a.cols)):
        raise DimensionError("take_cols", a.shape, (1, index.size))
    shape = a.shape

    def _backward(g):
        full = np.zeros(shape)
        full[:, index] = g
        return (full,)

    return Tensor._result(a.values[:, index], (a,), "take_cols", _backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise DimensionError("concat_cols", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def _backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return Tensor._result(np.hstack([p.values for p in parts]), parts, "concat_cols", _backward)


# --- the tape --------------------------------------------------------

class Tape:
    """Operations reachable from a root, ordered so inputs precede outputs."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: List[Tensor] = self._topological_order(root)

    @staticmethod
    def _topological_order(root: Tensor) -> List[Tensor]:
        order: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def run(self, seed: np.ndarray) -> None:
        pending = {id(self.root): seed}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor on the tape."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.rows}x{loss.cols}")
    if not loss.requires_grad:
        raise ContractError("backward: loss is not connected to any tensor that requires grad")
    Tape(loss).run(np.ones((1, 1)))


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
