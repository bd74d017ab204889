"""A small reverse-mode autodiff tensor over float64 numpy arrays.

Only the operations the encoder needs are provided. Operands must have
matching shapes except where an op documents otherwise (batched matmul,
``add_bias``, ``mul_const``). Every op records a closure mapping the output
gradient to parent gradients; :func:`backward` walks the graph once in
reverse topological order.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from depsan.errors import GraphCycle, NotScalar, ShapeMismatch

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def mul_const(a, const) -> Tensor:
    """Elementwise product with a constant array broadcast to ``a``'s shape."""
    a = as_tensor(a)
    const = np.asarray(const, dtype=DTYPE)
    try:
        out = a.data * const
    except ValueError:
        raise ShapeMismatch(f"mul_const: {const.shape} does not broadcast to {a.shape}") from None
    if out.shape != a.shape:
        raise ShapeMismatch(f"mul_const: {const.shape} would grow {a.shape}")
    return _make(out, (a,), lambda g: (g * const,))


def add_bias(x, b) -> Tensor:
    """Add a vector along the last axis."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeMismatch(f"add_bias: bias {b.shape} vs input {x.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.reshape(-1, g.shape[-1]).sum(axis=0)))


def mul_vec(x, w) -> Tensor:
    """Multiply by a vector along the last axis."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 1 or w.shape[0] != x.shape[-1]:
        raise ShapeMismatch(f"mul_vec: vector {w.shape} vs input {x.shape}")

    def backward(g):
        return g * w.data, (g * x.data).reshape(-1, g.shape[-1]).sum(axis=0)

    return _make(x.data * w.data, (x, w), backward)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: batch axes of {a.shape} and {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(a, -1, -2)


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: {a.shape} to {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat: shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, ts, backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def masked_fill(a, mask, value: float) -> Tensor:
    """Set positions where ``mask`` is true to ``value``; they get no gradient."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _make(np.where(mask, value, a.data), (a,), lambda g: (np.where(mask, 0.0, g),))


def softmax(a) -> Tensor:
    """Softmax along the last axis with max subtraction.

    Entries equal to -inf receive weight exactly 0. A row made entirely of
    -inf yields NaN; callers are expected to reject such rows first.
    """
    a = as_tensor(a)
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), backward)


def layer_norm(x, gain=None, bias=None, eps: float = 1e-12) -> Tensor:
    """Normalize each last-axis row to mean 0, variance 1, then apply gain/bias.

    ``eps`` is tiny so normalized rows have unit variance to ~1e-12.
    """
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gxx),)

    out = _make(xhat, (x,), backward)
    if gain is not None:
        out = mul_vec(out, gain)
    if bias is not None:
        out = add_bias(out, bias)
    return out


def embedding(table, ids) -> Tensor:
    """Gather rows of ``table``; gradients scatter-add back."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _make(table.data[ids], (table,), backward)


def dropout(x, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a mask drawn from ``rng``."""
    x = as_tensor(x)
    if p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul_const(x, keep)


def total(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _make(np.array(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def cross_entropy(logits, targets, valid=None) -> Tensor:
    """Mean softmax cross-entropy over the rows of ``logits`` marked valid.

    ``logits`` is (..., C), ``targets`` integer (...). Entries of -inf act as
    excluded classes; the target class must be finite.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch(f"cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    valid = np.ones(targets.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        raise ValueError("cross_entropy needs at least one valid row")
    # invalid rows may be all -inf; neutralize them so nothing leaks into NaN
    z = np.where(valid[..., None], logits.data, 0.0)
    m = z.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    s = e.sum(axis=-1, keepdims=True)
    probs = e / s
    picked = np.take_along_axis(z - m, targets[..., None], axis=-1)[..., 0]
    nll = np.log(s[..., 0]) - picked
    loss = float(np.where(valid, nll, 0.0).sum() / count)

    def backward(g):
        grad = probs.copy()
        np.put_along_axis(grad, targets[..., None],
                          np.take_along_axis(grad, targets[..., None], axis=-1) - 1.0, axis=-1)
        grad *= valid[..., None] * (float(g) / count)
        return (grad,)

    return _make(np.array(loss), (logits,), backward)


def _topo_order(root: Tensor) -> list[Tensor]:
    order = []
    state = {}  # id -> 1 while on the stack, 2 when finished
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        key = id(node)
        if done:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise GraphCycle("computation graph contains a cycle")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            ps = state.get(id(p))
            if ps == 1:
                raise GraphCycle("computation graph contains a cycle")
            if ps is None and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaves accumulate across calls (call :meth:`Tensor.zero_grad` or
    :func:`zero_grads` between steps); interior nodes are overwritten.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                            epsilon: float = 1e-4, coords=None) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``f`` recomputes a scalar loss from the current values of ``params``.
    The relative gap per coordinate is |a - n| / max(1, |a|, |n|).
    ``coords`` optionally caps how many coordinates per parameter are probed
    (an int, sampled with a fixed generator); by default all are.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    zero_grads(params)
    backward(f())
    worst = 0.0
    pick = np.random.Generator(np.random.PCG64(12345))
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            idx = np.sort(pick.choice(flat.size, size=coords, replace=False))
        a_flat = analytic.reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + epsilon
            up = float(f().data)
            flat[i] = old - epsilon
            down = float(f().data)
            flat[i] = old
            numeric = (up - down) / (2.0 * epsilon)
            a = float(a_flat[i])
            gap = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if not math.isfinite(gap):
                return math.inf
            worst = max(worst, gap)
    return worst
