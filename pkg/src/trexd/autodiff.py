"""Dense float64 tensors with tape-based reverse-mode differentiation.

Usage::

    with Tape() as tape:
        x = tape.watch(Tensor([1.0, 2.0]))
        y = (x * x).sum()
    grads = backward(tape, y)
    grads[x]          # -> array([2., 4.])

Operations on tensors that are not watched by the active tape are evaluated
eagerly and leave no trace, so the same model code serves both plain
evaluation and gradient computation.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def _all_finite(arr: np.ndarray) -> bool:
    # a finite sum implies finite entries; only an overflowing sum needs the elementwise check
    return math.isfinite(arr.sum()) or bool(np.isfinite(arr).all())


class Tensor:
    """Immutable float64 array, optionally registered on a :class:`Tape`."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data: Any):
        arr = np.array(data, dtype=np.float64)
        if not _all_finite(arr):
            raise NonFiniteError("tensor data contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr
        self._tape = None
        self._node = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray, op: str) -> "Tensor":
        # internal constructor: no copy, finiteness flagged per op
        arr = np.asarray(arr, dtype=np.float64)
        if not _all_finite(arr):
            raise NonFiniteError(f"non-finite value produced by {op}")
        t = cls.__new__(cls)
        arr.flags.writeable = False
        t.data = arr
        t._tape = None
        t._node = -1
        return t

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar()

    def __float__(self) -> float:
        return self.item()

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = ", traced" if self._tape is not None else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

    # arithmetic sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __getitem__(self, index): return take(self, index)
    def __abs__(self): return absolute(self)

    def sum(self, axis=None): return tsum(self, axis)
    def mean(self, axis=None): return tmean(self, axis)
    def max(self): return tmax(self)
    def min(self): return tmin(self)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


def _not_scalar():
    raise ContractError("item() requires a single-element tensor")


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: str
    inputs: tuple  # Tensor operands (constants included)
    saved: Any
    attrs: dict


class Tape:
    """Ordered record of traced operations.

    Node ``k`` only refers to nodes with smaller indices, so a reverse sweep
    over the list is a valid topological order.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: list[Tensor] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def watch(self, x: Any) -> Tensor:
        """Return a fresh leaf tensor holding ``x``'s values, tracked by this tape."""
        src = as_tensor(x)
        leaf = Tensor.__new__(Tensor)
        leaf.data = src.data
        leaf._tape = self
        leaf._node = len(self.nodes)
        self.nodes.append(Node("leaf", (), None, {}))
        self.leaves.append(leaf)
        return leaf

    def tracks(self, t: Tensor) -> bool:
        return t._tape is self

    def replay(self, values: dict | None = None) -> list[np.ndarray]:
        """Recompute every node forward from the leaves.

        ``values`` optionally maps leaf tensors to replacement arrays. Returns
        the per-node outputs; with no replacements they equal the recorded
        outputs bit for bit.
        """
        values = values or {}
        leaf_by_node = {leaf._node: leaf for leaf in self.leaves}
        outs: list[np.ndarray] = []
        for k, node in enumerate(self.nodes):
            if node.op == "leaf":
                leaf = leaf_by_node[k]
                outs.append(np.asarray(values.get(leaf, leaf.data), dtype=np.float64))
                continue
            args = [outs[t._node] if t._tape is self else t.data for t in node.inputs]
            out, _ = _OPS[node.op][0](*args, **node.attrs)
            outs.append(out)
        return outs


class Gradients(dict):
    """Mapping from leaf tensor to its gradient array."""

    def __missing__(self, key):
        raise KeyError("tensor is not a leaf of this tape")


def _record(op: str, inputs: tuple, attrs: dict) -> Tensor:
    arrays = [t.data for t in inputs]
    out, saved = _OPS[op][0](*arrays, **attrs)
    result = Tensor._wrap(out, op)
    tape = _active_tape()
    if tape is not None and any(t._tape is tape for t in inputs):
        result._tape = tape
        result._node = len(tape.nodes)
        tape.nodes.append(Node(op, inputs, saved, attrs))
    return result


def backward(tape: Tape, output: Tensor) -> Gradients:
    """Reverse-mode sweep from a scalar ``output`` to every leaf of ``tape``.

    Leaves that do not influence the output receive a zero gradient.
    """
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    if output._tape is tape:
        grads[output._node] = np.ones_like(output.data)
    for k in range(len(tape.nodes) - 1, -1, -1):
        g = grads[k]
        node = tape.nodes[k]
        if g is None or node.op == "leaf":
            continue
        arrays = [t.data for t in node.inputs]
        needs = tuple(t._tape is tape for t in node.inputs)
        input_grads = _OPS[node.op][1](g, node.saved, needs, *arrays, **node.attrs)
        for t, gi in zip(node.inputs, input_grads):
            if gi is None or t._tape is not tape:
                continue
            j = t._node
            grads[j] = gi if grads[j] is None else grads[j] + gi
    result = Gradients()
    for leaf in tape.leaves:
        g = grads[leaf._node]
        result[leaf] = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)
    return result


def value_and_grad(fn: Callable[[Tensor], Tensor], at: Any) -> tuple[float, np.ndarray]:
    """Evaluate scalar ``fn`` at ``at`` and its gradient with a fresh tape."""
    with Tape() as tape:
        x = tape.watch(at)
        y = fn(x)
    return y.item(), backward(tape, y)[x]


def finite_difference_gradient(fn: Callable[[Tensor], Any], at: Any, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn``, one coordinate at a time."""
    if not h > 0:
        raise ContractError("finite-difference step must be positive")
    x0 = np.array(as_tensor(at).data, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = float(_scalar(fn(Tensor(xp.reshape(x0.shape)))))
        fm = float(_scalar(fn(Tensor(xm.reshape(x0.shape)))))
        flat[i] = (fp - fm) / (2.0 * h)
    return grad


def _scalar(v):
    return v.item() if isinstance(v, Tensor) else v


# ---------------------------------------------------------------------------
# op table: name -> (forward(*arrays, **attrs) -> (out, saved),
#                    backward(g, saved, *arrays, **attrs) -> grads per input)

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    # matrix/vector/scalar combinations only
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0 or a.size == 1 or b.size == 1:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _add_f(a, b):
    _check_broadcast(a, b, "add")
    return a + b, None


def _add_b(g, _, needs, a, b):
    return (_unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None)


def _sub_f(a, b):
    _check_broadcast(a, b, "sub")
    return a - b, None


def _sub_b(g, _, needs, a, b):
    return (_unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None)


def _mul_f(a, b):
    _check_broadcast(a, b, "mul")
    return a * b, None


def _mul_b(g, _, needs, a, b):
    return (_unbroadcast(g * b, a.shape) if needs[0] else None,
            _unbroadcast(g * a, b.shape) if needs[1] else None)


def _div_f(a, b):
    _check_broadcast(a, b, "div")
    return a / b, None


def _div_b(g, _, needs, a, b):
    return (_unbroadcast(g / b, a.shape) if needs[0] else None,
            _unbroadcast(-g * a / (b * b), b.shape) if needs[1] else None)


def _neg_f(a):
    return -a, None


def _neg_b(g, _, needs, a):
    return (-g,)


def _matmul_f(a, b):
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul needs vectors or matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b, None


def _matmul_b(g, _, needs, a, b):
    ga = gb = None
    if a.ndim == 2 and b.ndim == 2:
        if needs[0]:
            ga = g @ b.T
        if needs[1]:
            gb = a.T @ g
    elif a.ndim == 1 and b.ndim == 2:
        if needs[0]:
            ga = b @ g
        if needs[1]:
            gb = np.outer(a, g)
    elif a.ndim == 2 and b.ndim == 1:
        if needs[0]:
            ga = np.outer(g, b)
        if needs[1]:
            gb = a.T @ g
    else:
        ga, gb = g * b, g * a
    return ga, gb


def _linear_f(x, w, b):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"linear: shapes {x.shape}, {w.shape}, {b.shape} do not chain")
    return x @ w + b, None


def _linear_b(g, _, needs, x, w, b):
    gx = gw = gb = None
    if needs[0]:
        gx = g @ w.T
    if needs[1]:
        gw = np.outer(x, g) if x.ndim == 1 else x.T @ g
    if needs[2]:
        gb = g if g.ndim == 1 else g.sum(axis=0)
    return gx, gw, gb


def _pow_f(a, exponent):
    return a ** exponent, None


def _pow_b(g, _, needs, a, exponent):
    return (g * exponent * a ** (exponent - 1),)


def _relu_f(a):
    return np.maximum(a, 0.0), None


def _relu_b(g, _, needs, a):
    return (g * (a > 0),)


def _tanh_f(a):
    out = np.tanh(a)
    return out, out


def _tanh_b(g, out, needs, a):
    return (g * (1.0 - out * out),)


def _sigmoid(a):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _sigmoid_f(a):
    out = _sigmoid(a)
    return out, out


def _sigmoid_b(g, out, needs, a):
    return (g * out * (1.0 - out),)


def _softplus_f(a):
    return np.logaddexp(0.0, a), None


def _softplus_b(g, _, needs, a):
    return (g * _sigmoid(a),)


def _exp_f(a):
    with np.errstate(over="ignore"):
        out = np.exp(a)
    return out, out


def _exp_b(g, out, needs, a):
    return (g * out,)


def _log_f(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(a), None


def _log_b(g, _, needs, a):
    return (g / a,)


def _abs_f(a):
    return np.abs(a), None


def _abs_b(g, _, needs, a):
    return (g * np.sign(a),)


def _softmax_f(a):
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return out, out


def _softmax_b(g, out, needs, a):
    inner = (g * out).sum(axis=-1, keepdims=True)
    return (out * (g - inner),)


def _log_softmax_f(a):
    shifted = a - a.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    return out, out


def _log_softmax_b(g, out, needs, a):
    return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)


def _sum_f(a, axis):
    return np.asarray(a.sum(axis=axis)), None


def _sum_b(g, _, needs, a, axis):
    if axis is None:
        return (np.broadcast_to(g, a.shape).copy(),)
    return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


def _mean_f(a, axis):
    return np.asarray(a.mean(axis=axis)), None


def _mean_b(g, _, needs, a, axis):
    n = a.size if axis is None else a.shape[axis]
    (full,) = _sum_b(g, None, needs, a, axis)
    return (full / n,)


def _max_f(a):
    k = int(np.argmax(a))
    return np.asarray(a.reshape(-1)[k]), k


def _extreme_b(g, k, needs, a):
    out = np.zeros(a.size)
    out[k] = g
    return (out.reshape(a.shape),)


def _min_f(a):
    k = int(np.argmin(a))
    return np.asarray(a.reshape(-1)[k]), k


def _take_f(a, index):
    return np.array(a[index], dtype=np.float64), None


def _take_b(g, _, needs, a, index):
    out = np.zeros_like(a)
    np.add.at(out, index, g)
    return (out,)


def _reshape_f(a, shape):
    return a.reshape(shape), None


def _reshape_b(g, _, needs, a, shape):
    return (g.reshape(a.shape),)


def _stack_f(*arrays):
    return np.stack(arrays), None


def _stack_b(g, _, needs, *arrays):
    return tuple(g[i] for i in range(len(arrays)))


def _concat_f(*arrays):
    return np.concatenate([np.reshape(a, -1) for a in arrays]), None


def _concat_b(g, _, needs, *arrays):
    out, start = [], 0
    for a in arrays:
        out.append(g[start:start + a.size].reshape(a.shape))
        start += a.size
    return tuple(out)


_OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (_add_f, _add_b),
    "sub": (_sub_f, _sub_b),
    "mul": (_mul_f, _mul_b),
    "div": (_div_f, _div_b),
    "neg": (_neg_f, _neg_b),
    "matmul": (_matmul_f, _matmul_b),
    "linear": (_linear_f, _linear_b),
    "pow": (_pow_f, _pow_b),
    "relu": (_relu_f, _relu_b),
    "tanh": (_tanh_f, _tanh_b),
    "sigmoid": (_sigmoid_f, _sigmoid_b),
    "softplus": (_softplus_f, _softplus_b),
    "exp": (_exp_f, _exp_b),
    "log": (_log_f, _log_b),
    "abs": (_abs_f, _abs_b),
    "softmax": (_softmax_f, _softmax_b),
    "log_softmax": (_log_softmax_f, _log_softmax_b),
    "sum": (_sum_f, _sum_b),
    "mean": (_mean_f, _mean_b),
    "max": (_max_f, _extreme_b),
    "min": (_min_f, _extreme_b),
    "take": (_take_f, _take_b),
    "reshape": (_reshape_f, _reshape_b),
    "stack": (_stack_f, _stack_b),
    "concat": (_concat_f, _concat_b),
}


def add(a, b) -> Tensor: return _record("add", (as_tensor(a), as_tensor(b)), {})
def sub(a, b) -> Tensor: return _record("sub", (as_tensor(a), as_tensor(b)), {})
def mul(a, b) -> Tensor: return _record("mul", (as_tensor(a), as_tensor(b)), {})
def div(a, b) -> Tensor: return _record("div", (as_tensor(a), as_tensor(b)), {})
def neg(a) -> Tensor: return _record("neg", (as_tensor(a),), {})
def power(a, exponent: float) -> Tensor: return _record("pow", (as_tensor(a),), {"exponent": float(exponent)})
def exp(a) -> Tensor: return _record("exp", (as_tensor(a),), {})
def log(a) -> Tensor: return _record("log", (as_tensor(a),), {})
def absolute(a) -> Tensor: return _record("abs", (as_tensor(a),), {})
def softplus(a) -> Tensor: return _record("softplus", (as_tensor(a),), {})


def matmul(a, b) -> Tensor:
    """Matrix product for (m,k)@(k,n), (k,)@(k,n), (m,k)@(k,) and (k,)@(k,)."""
    return _record("matmul", (as_tensor(a), as_tensor(b)), {})


def linear(x, w, b) -> Tensor:
    """Fused ``x @ w + b`` for a vector or a row-batch ``x``."""
    return _record("linear", (as_tensor(x), as_tensor(w), as_tensor(b)), {})


_ACTIVATIONS = ("relu", "tanh", "sigmoid")


def activation(x, kind: str) -> Tensor:
    if kind not in _ACTIVATIONS:
        raise ContractError(f"unknown activation {kind!r}")
    return _record(kind, (as_tensor(x),), {})


def relu(x) -> Tensor: return activation(x, "relu")
def tanh(x) -> Tensor: return activation(x, "tanh")
def sigmoid(x) -> Tensor: return activation(x, "sigmoid")


def softmax(logits) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    logits = as_tensor(logits)
    if logits.ndim == 0 or logits.shape[-1] < 1:
        raise DimensionError("softmax needs at least one class")
    return _record("softmax", (logits,), {})


def log_softmax(logits) -> Tensor:
    return _record("log_softmax", (as_tensor(logits),), {})


def tsum(a, axis: int | None = None) -> Tensor:
    return _record("sum", (as_tensor(a),), {"axis": axis})


def tmean(a, axis: int | None = None) -> Tensor:
    return _record("mean", (as_tensor(a),), {"axis": axis})


def tmax(a) -> Tensor:
    """Maximum over all entries; the gradient goes to the first argmax."""
    return _record("max", (as_tensor(a),), {})


def tmin(a) -> Tensor:
    return _record("min", (as_tensor(a),), {})


def take(a, index) -> Tensor:
    """Basic or integer-array indexing."""
    if isinstance(index, list):
        index = np.asarray(index, dtype=np.intp)
    return _record("take", (as_tensor(a),), {"index": index})


def reshape(a, shape) -> Tensor:
    shape = shape if isinstance(shape, tuple) else tuple(np.atleast_1d(shape).tolist())
    return _record("reshape", (as_tensor(a),), {"shape": shape})


def stack(items: Sequence) -> Tensor:
    return _record("stack", tuple(as_tensor(t) for t in items), {})


def concat(items: Sequence) -> Tensor:
    """Concatenate flattened operands into one vector."""
    return _record("concat", tuple(as_tensor(t) for t in items), {})
