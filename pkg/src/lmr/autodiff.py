"""Reverse-mode automatic differentiation over a dynamically recorded graph.

Every differentiable quantity in the package is a :class:`Tensor` wrapping a
float64 numpy array. Operations record their inputs and an adjoint closure
only when at least one input requires a gradient, so evaluation-only code
builds no graph at all.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class BackwardError(RuntimeError):
    """Illegal call to :func:`backward`."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_adjoint", "_consumed", "n_grad_updates", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._adjoint = None
        self._consumed = False
        self.n_grad_updates = 0
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None
        self.n_grad_updates = 0

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, adjoint):
    """Wrap an op result, recording the graph edge only if needed."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._adjoint = adjoint
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def sqrt(a):
    """Square root; the adjoint at exactly 0 is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def adjoint(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _make(out, (a,), adjoint)


def abs_(a):
    """Absolute value with the subgradient 0 at 0."""
    a = as_tensor(a)
    ad = a.data
    return _make(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    # split form avoids overflow in exp for large |x|
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


# ---------------------------------------------------------------- reductions


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), adjoint)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    try:
        out = ad @ bd
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def adjoint(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, (a, b), adjoint)


def linear(x, weight, bias=None):
    """Fused ``x @ weight.T + bias`` for a weight stored as (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is None:
        return _make(out, (x, weight), lambda g: (g @ wd, (g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1]))))
    bias = as_tensor(bias)
    out = out + bias.data

    def adjoint(g):
        g2 = g.reshape(-1, g.shape[-1])
        return g @ wd, g2.T @ xd.reshape(-1, xd.shape[-1]), g2.sum(axis=0)

    return _make(out, (x, weight, bias), adjoint)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inverse = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def swapaxes(a, i, j):
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),))


# ---------------------------------------------------------------- structure


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(old),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {old} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, old),))


def slice_(a, index):
    """Basic or advanced indexing; the adjoint scatter-adds into a zero array."""
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(index)

    def adjoint(g):
        out = np.zeros(shape)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), adjoint)


def _is_basic(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def take(a, indices, axis):
    """Gather ``indices`` along ``axis``."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def adjoint(g):
        out = np.zeros(shape)
        idx = [slice(None)] * len(shape)
        idx[axis] = indices
        np.add.at(out, tuple(idx), g)
        return (out,)

    return _make(np.take(a.data, indices, axis=axis), (a,), adjoint)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in tensors)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack: incompatible shapes " + ", ".join(str(t.shape) for t in tensors)) from None
    n = len(tensors)
    return _make(out, tuple(tensors), lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# ---------------------------------------------------------------- rotations


_SMALL_ANGLE = 1e-8
_TAYLOR_ANGLE = 1e-3


def _skew(w):
    z = np.zeros(w.shape[:-1])
    x, y, zz = w[..., 0], w[..., 1], w[..., 2]
    return np.stack(
        [np.stack([z, -zz, y], -1), np.stack([zz, z, -x], -1), np.stack([-y, x, z], -1)],
        axis=-2,
    )


def _rodrigues_coeffs(angle):
    """sin(a)/a, (1-cos a)/a^2 and their derivatives divided by a."""
    small = angle < _TAYLOR_ANGLE
    a = np.where(small, 1.0, angle)
    a2 = angle * angle
    s, c = np.sin(a), np.cos(a)
    A = np.where(small, 1.0 - a2 / 6.0 + a2 * a2 / 120.0, s / a)
    B = np.where(small, 0.5 - a2 / 24.0 + a2 * a2 / 720.0, (1.0 - c) / (a * a))
    dA = np.where(small, -1.0 / 3.0 + a2 / 30.0, (a * c - s) / a**3)
    dB = np.where(small, -1.0 / 12.0 + a2 / 180.0, (a * s - 2.0 * (1.0 - c)) / a**4)
    return A, B, dA, dB


_BASIS_SKEW = _skew(np.eye(3))  # [e_i]x for i = 0, 1, 2


def rodrigues_array(w):
    """Axis-angle (..., 3) to rotation matrices (..., 3, 3), no graph."""
    w = np.asarray(w, dtype=np.float64)
    angle = np.linalg.norm(w, axis=-1)
    K = _skew(w)
    A, B, _, _ = _rodrigues_coeffs(angle)
    tiny = (angle < _SMALL_ANGLE)[..., None, None]
    B = np.where(angle < _SMALL_ANGLE, 0.0, B)
    R = np.eye(3) + A[..., None, None] * K + B[..., None, None] * (K @ K)
    return np.where(tiny, np.eye(3) + K, R)


def rodrigues(w):
    """Differentiable exponential map from axis-angle to rotation matrix.

    Below an angle of 1e-8 the first-order form ``I + [w]x`` is used for both
    value and gradient.
    """
    w = as_tensor(w)
    if w.shape[-1] != 3:
        raise ShapeError(f"rodrigues: last axis must be 3, got {w.shape}")
    wd = w.data
    out = rodrigues_array(wd)

    def adjoint(g):
        angle = np.linalg.norm(wd, axis=-1)
        A, B, dA, dB = _rodrigues_coeffs(angle)
        tiny = angle < _SMALL_ANGLE
        K = _skew(wd)
        K2 = K @ K
        # <g, K> and <g, K^2> contracted per batch element
        gK = np.einsum("...ij,...ij->...", g, K)
        gK2 = np.einsum("...ij,...ij->...", g, K2)
        grad = (dA * gK + dB * gK2)[..., None] * wd
        for i in range(3):
            E = _BASIS_SKEW[i]
            dK2 = E @ K + K @ E
            gi = A * np.einsum("...ij,ij->...", g, E) + B * np.einsum("...ij,...ij->...", g, dK2)
            grad[..., i] += gi
        exact = np.stack([np.einsum("...ij,ij->...", g, _BASIS_SKEW[i]) for i in range(3)], -1)
        return (np.where(tiny[..., None], exact, grad),)

    return _make(out, (w,), adjoint)


# ---------------------------------------------------------------- backward


def _topo_order(root):
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` of every leaf that ``loss`` depends on.

    Gradients accumulate into leaves (call ``zero_grad`` between steps). The
    graph is released afterwards, so a second call on the same loss raises.
    """
    if loss.data.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise BackwardError("backward already ran on this graph")
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._adjoint(g)):
            if not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.n_grad_updates += 1
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._adjoint = None
            node._consumed = True
    loss._consumed = True


def grad_of(f, params):
    """Evaluate scalar ``f()`` and return (value, list of gradient arrays)."""
    for p in params:
        p.zero_grad()
    out = f()
    backward(out)
    return out.item(), [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]


def finite_diff_check(f, params, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a zero-argument callable returning a scalar Tensor that reads the
    current values of ``params``. The relative error of each coordinate uses
    ``max(1, |analytic|, |numeric|)`` as denominator.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, analytic = grad_of(f, params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite function value while perturbing {p.name or 'param'}[{i}]")
            num = (fp - fm) / (2.0 * eps)
            err = abs(num - gflat[i]) / max(1.0, abs(num), abs(gflat[i]))
            worst = max(worst, err)
    return worst


class ParamStore:
    """Named trainable tensors in insertion order."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, shape):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.zeros(shape), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def n_values(self):
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def grads(self):
        return OrderedDict((n, np.zeros(t.shape) if t.grad is None else t.grad) for n, t in self._params.items())

    def state_dict(self):
        return OrderedDict((n, t.data.copy()) for n, t in self._params.items())

    def load_state_dict(self, values):
        missing = set(self._params) - set(values)
        extra = set(values) - set(self._params)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name}: expected shape {t.shape}, got {arr.shape}")
            t.data = arr.copy()
