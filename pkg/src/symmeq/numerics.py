"""Small reverse-mode autodiff over float64 numpy arrays.

Only what the networks and losses need: dense 2-D algebra, pointwise
nonlinearities, reductions, and the gather used to realize shared weights.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when a value or adjoint in the graph stops being finite."""

    def __init__(self, op, what="value"):
        super().__init__(f"non-finite {what} at node '{op}'")
        self.op = op


class Tensor:
    """A node in the computation graph.

    Leaves created with ``requires_grad=True`` are parameters; everything
    else is either a constant or the output of an op.
    """

    __slots__ = ("data", "grad", "op", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, op="leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.op = op
        self.parents = ()
        self.backward_fn = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op, parents, backward_fn):
    out = Tensor(data, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- binary ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, "add", (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, "sub", (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, "mul", (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _node(a.data / b.data, "div", (a, b), bw)


def matmul(a, b):
    """(n, k) @ (k, m). ``a`` may also be 1-D."""
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.data.ndim == 1:
            return g @ b.data.T, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, "matmul", (a, b), bw)


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        return (
            _unbroadcast(np.where(pick_a, g, 0.0), a.shape),
            _unbroadcast(np.where(pick_a, 0.0, g), b.shape),
        )

    return _node(np.where(pick_a, a.data, b.data), "minimum", (a, b), bw)


# ----------------------------------------------------------------- unary ops

def neg(a):
    a = as_tensor(a)
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    return _node(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0.0  # subgradient 0 at the kink
    return _node(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def elu(a, alpha=1.0):
    a = as_tensor(a)
    pos = a.data > 0.0
    em = np.exp(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, alpha * (em - 1.0))
    return _node(out, "elu", (a,), lambda g: (g * np.where(pos, 1.0, alpha * em),))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _node(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return _node(e, "exp", (a,), lambda g: (g * e,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def clip(a, lo, hi):
    """Clamp; gradient passes inside [lo, hi] and is zero outside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * inside,))


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        out = np.reshape(a.data.sum(), (1,))
        return _node(out, "sum", (a,), lambda g: (np.full(shape, g[0]),))

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(a.data.sum(axis=axis), "sum", (a,), bw)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), "concat", tuple(tensors), bw)


def gather_signed(coeffs, index, sign):
    """``out = coeffs[index] * sign``: realize a tied array from free coefficients.

    ``index`` and ``sign`` share the output shape; entries with sign 0 are
    structurally zero.
    """
    coeffs = as_tensor(coeffs)
    flat_idx = index.reshape(-1)
    flat_sign = sign.reshape(-1)
    n = coeffs.data.size
    if n == 0:  # empty space: every entry is structurally zero
        return _node(np.zeros(index.shape, dtype=DTYPE), "gather_signed", (coeffs,), lambda g: (np.zeros(0),))

    def bw(g):
        return (np.bincount(flat_idx, weights=g.reshape(-1) * flat_sign, minlength=n),)

    return _node(coeffs.data[index] * sign, "gather_signed", (coeffs,), bw)


def signed_permute(x, target, sign):
    """Apply a signed permutation along the last axis: out[..., target[i]] = sign[i] * x[..., i]."""
    x = as_tensor(x)
    target = np.asarray(target)
    sign = np.asarray(sign, dtype=DTYPE)
    src = np.empty_like(target)
    src[target] = np.arange(target.size)

    def bw(g):
        return (g[..., target] * sign,)

    return _node(x.data[..., src] * sign[src], "signed_permute", (x,), bw)


# ------------------------------------------------------------------ backward

def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Reverse-mode sweep from a scalar root.

    Returns a dict mapping every parameter leaf reached to its gradient.
    Adjoints are local to the call; nothing is written back into the graph,
    so sweeping the same graph twice gives identical results.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    adj = {id(root): np.ones_like(root.data)}
    grads = {}
    for node in reversed(_topo(root)):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(node.data)):
            raise NonFiniteError(node.op)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(node.op, "adjoint")
        if node.backward_fn is None:
            grads[node] = g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            adj[key] = adj[key] + pg if key in adj else pg
    return grads


def finite_difference_check(f, x, grad, epsilon=1e-6):
    """Max relative error between ``grad`` and central differences of ``f`` at ``x``.

    ``f`` maps a flat float64 array to a float. The error per coordinate is
    |analytic - central| / max(1, |central|).
    """
    x = np.array(x, dtype=DTYPE).reshape(-1)
    grad = np.asarray(grad, dtype=DTYPE).reshape(-1)
    worst = 0.0
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += epsilon
        xm[i] -= epsilon
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f(x +/- eps e_{i})")
        central = (fp - fm) / (2.0 * epsilon)
        worst = max(worst, abs(grad[i] - central) / max(1.0, abs(central)))
    return worst
