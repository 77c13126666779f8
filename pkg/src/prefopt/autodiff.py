"""Dense float64 tensors with reverse-mode differentiation.

Every op returns a new :class:`Tensor`. When any input requires a gradient the
output keeps a reference to its inputs and a closure mapping the output
gradient to input gradients; :func:`backward` orders those records into a
:class:`ComputationTape`, runs it once and releases it.

There is no global state, so independent graphs can be built and
differentiated from different threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from prefopt.errors import DimensionError, DomainError, NumericalError, UsageError

# Finite stand-in for -inf so masked rows stay finite under the NaN policy.
MASK_VALUE = -1e30


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._backward = None
        self._consumed = False

    @classmethod
    def _result(cls, data, op, parents, backward_fn):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        out._consumed = False
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(op, data):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op}: produced non-finite values")
    return data


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a} and {b} do not broadcast") from None


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _finite("add", a.data + b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(out, "add", (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _finite("mul", a.data * b.data)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(out, "mul", (a, b), backward)


def scale(x, c):
    c = float(c)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _finite("scale", x.data * c)
    return Tensor._result(out, "scale", (x,), lambda g: (g * c,))


def neg(x):
    return Tensor._result(-x.data, "neg", (x,), lambda g: (-g,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    with np.errstate(over="ignore", invalid="ignore"):
        out = _finite("matmul", np.matmul(a.data, b.data))

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(out, "matmul", (a, b), backward)


# ------------------------------------------------------------- elementwise


def exp(x):
    with np.errstate(over="ignore"):
        out = _finite("exp", np.exp(x.data))
    return Tensor._result(out, "exp", (x,), lambda g: (g * out,))


def tanh(x):
    out = np.tanh(x.data)
    return Tensor._result(out, "tanh", (x,), lambda g: (g * (1.0 - out * out),))


def _stable_sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    out = _finite("sigmoid", _stable_sigmoid(x.data))
    return Tensor._result(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(x):
    """log(sigmoid(x)) evaluated as -softplus(-x)."""
    z = x.data
    out = _finite("log_sigmoid", np.minimum(z, 0.0) - np.log1p(np.exp(-np.abs(z))))
    return Tensor._result(out, "log_sigmoid", (x,), lambda g: (g * _stable_sigmoid(-z),))


# -------------------------------------------------------------- reductions


def _check_axis(op, x, axis):
    if axis is None:
        if x.size == 0:
            raise DomainError(f"{op}: empty reduction")
        return None
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {x.shape}")
    if x.shape[axis] == 0:
        raise DomainError(f"{op}: empty reduction axis {axis} in shape {x.shape}")
    return axis % x.ndim


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    ax = _check_axis("sum", x, axis)
    with np.errstate(over="ignore", invalid="ignore"):
        out = _finite("sum", np.sum(x.data, axis=ax))

    def backward(g):
        if ax is not None:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(np.asarray(out, dtype=np.float64), "sum", (x,), backward)


def mean(x, axis=None):
    ax = _check_axis("mean", x, axis)
    count = x.size if ax is None else x.shape[ax]
    return scale(sum(x, axis=ax), 1.0 / count)


def log_softmax(x):
    _check_axis("log_softmax", x, -1)
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    out = _finite("log_softmax", shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True)))

    def backward(g):
        return (g - np.exp(out) * np.sum(g, axis=-1, keepdims=True),)

    return Tensor._result(out, "log_softmax", (x,), backward)


def softmax(x):
    _check_axis("softmax", x, -1)
    shifted = np.exp(x.data - np.max(x.data, axis=-1, keepdims=True))
    out = _finite("softmax", shifted / np.sum(shifted, axis=-1, keepdims=True))

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return Tensor._result(out, "softmax", (x,), backward)


# ----------------------------------------------------------- shape plumbing


def concat(tensors: Sequence[Tensor], axis=-1):
    """Concatenate along the last axis; all leading dimensions must agree."""
    if axis != -1:
        raise DimensionError("concat: only the last axis is supported")
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: no inputs")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(f"concat: shapes {tensors[0].shape} and {t.shape} differ before the last axis")
    out = np.concatenate([t.data for t in tensors], axis=-1)
    bounds = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=-1))

    return Tensor._result(out, "concat", tensors, backward)


def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return Tensor._result(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x, a1, a2):
    out = np.swapaxes(x.data, a1, a2)
    return Tensor._result(out, "swapaxes", (x,), lambda g: (np.swapaxes(g, a1, a2),))


def broadcast_to(x, shape):
    shape = tuple(shape)
    _broadcast_shape("broadcast_to", x.shape, shape)
    out = np.broadcast_to(x.data, shape).copy()
    return Tensor._result(out, "broadcast_to", (x,), lambda g: (_unbroadcast(g, x.shape),))


def gather_rows(table, idx):
    """Row lookup ``table[idx]`` (embedding gather); ``idx`` is an integer array."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError(f"gather_rows: indices must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < -table.shape[0] or idx.max() >= table.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for table of shape {table.shape}")
    out = table.data[idx]

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return Tensor._result(out, "gather_rows", (table,), backward)


def pick(x, idx):
    """Select one entry per row along the last axis: ``out[...] = x[..., idx[...]]``."""
    idx = np.asarray(idx)
    if idx.shape != x.shape[:-1]:
        raise DimensionError(f"pick: index shape {idx.shape} does not match {x.shape[:-1]}")
    out = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        grad = np.zeros_like(x.data)
        np.put_along_axis(grad, idx[..., None], g[..., None], axis=-1)
        return (grad,)

    return Tensor._result(out, "pick", (x,), backward)


def causal_mask(scores):
    """Replace entries above the diagonal of the last two axes by MASK_VALUE."""
    if scores.ndim < 2 or scores.shape[-1] != scores.shape[-2]:
        raise DimensionError(f"causal_mask: needs square trailing axes, got {scores.shape}")
    n = scores.shape[-1]
    future = np.triu(np.ones((n, n), dtype=bool), k=1)
    out = np.where(future, MASK_VALUE, scores.data)
    return Tensor._result(out, "causal_mask", (scores,), lambda g: (np.where(future, 0.0, g),))


# ---------------------------------------------------------------- backward


@dataclass
class ComputationTape:
    """Recorded ops in topological order (every node after its inputs)."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor):
        order, seen = [], set()
        stack = [(output, False)]
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def run(self, seed_grad):
        grads = {id(self.nodes[-1]): seed_grad}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def release(self):
        for node in self.nodes:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None
                node._consumed = True
        self.nodes = []


def backward(output: Tensor):
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The graph behind ``output`` is consumed; calling backward on it again is
    a usage error.
    """
    if output._consumed:
        raise UsageError("backward: graph already consumed")
    if output.size != 1:
        raise UsageError(f"backward: output must be a scalar, got shape {output.shape}")
    if not output.requires_grad:
        return
    tape = ComputationTape.from_output(output)
    tape.run(np.ones_like(output.data))
    tape.release()


# -------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: dict  # leaf -> relative error of the probed gradient vector
    tolerance: float
    coordinate_error: dict = None  # leaf -> worst single-coordinate relative error (diagnostic)

    @property
    def passed(self):
        return all(err < self.tolerance for err in self.max_rel_error.values())


def grad_check(
    builder: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    tolerance=1e-6,
    h=1e-5,
    floor=1e-6,
    max_coords=None,
    seed=0,
):
    """Compare analytic gradients of ``builder(params)`` with central differences.

    The relative error of a leaf is ``||a - n|| / max(||a||, ||n||, floor)`` over
    its probed coordinates. A per-coordinate version is also reported; it is
    limited by round-off (about ``eps * |f| / h``) wherever a single gradient
    entry is tiny, so it is kept as a diagnostic rather than the pass rule.
    With ``max_coords`` only a seeded subset of coordinates per leaf is probed.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values, requires_grad=False):
        leaves = {k: Tensor(v, requires_grad=requires_grad) for k, v in values.items()}
        return builder(leaves), leaves

    out, leaves = evaluate(base, requires_grad=True)
    again, _ = evaluate(base)
    if out.item() != again.item():
        raise UsageError("grad_check: graph builder is not deterministic")
    for leaf in leaves.values():
        leaf.zero_grad()
    backward(out)

    rng = np.random.default_rng(seed)
    errors, coordinate = {}, {}
    for name, value in base.items():
        grad = leaves[name].grad
        analytic = (np.zeros_like(value) if grad is None else grad).reshape(-1)
        coords = np.arange(value.size)
        if max_coords is not None and value.size > max_coords:
            coords = np.sort(rng.choice(value.size, size=max_coords, replace=False))
        worst = 0.0
        a_vec, n_vec = [], []
        for c in coords:
            shifted = dict(base)
            plus = value.copy().reshape(-1)
            plus[c] += h
            shifted[name] = plus.reshape(value.shape)
            f_plus = evaluate(shifted)[0].item()
            minus = value.copy().reshape(-1)
            minus[c] -= h
            shifted[name] = minus.reshape(value.shape)
            f_minus = evaluate(shifted)[0].item()
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[c]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
            a_vec.append(a)
            n_vec.append(numeric)
        a_vec, n_vec = np.array(a_vec), np.array(n_vec)
        scale = max(np.linalg.norm(a_vec), np.linalg.norm(n_vec), floor)
        errors[name] = float(np.linalg.norm(a_vec - n_vec) / scale)
        coordinate[name] = worst
    return GradCheckReport(errors, tolerance, coordinate)
