"""Dense tensors with tape-free reverse-mode differentiation.

Every operation returns a new :class:`Tensor` holding references to its
inputs and a closure mapping the output gradient to input gradients.
:func:`backward` walks the graph in reverse topological order and
accumulates into :class:`Parameter` gradients.

Broadcasting is intentionally narrow: a smaller operand must match the
trailing axes of the larger one exactly (bias over leading axes).
"""
from contextlib import contextmanager

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, NumericError

MAX_RANK = 4

_recording = True


@contextmanager
def no_grad():
    """Evaluate without building a graph (inference, finite differences)."""
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, parents=(), backward=None, op="const", requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise DimensionError(f"rank {arr.ndim} exceeds maximum rank {MAX_RANK} (shape {arr.shape})")
        _check_finite(arr, op)
        self.data = arr
        self._op = op
        if _recording and parents and any(p.requires_grad for p in parents):
            self.requires_grad = True
            self._parents = parents
            self._backward = backward
        else:
            self.requires_grad = requires_grad
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return rsub_scalar(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self):
        return sum_all(self)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            return mean_all(self)
        return mean_axis(self, axis, keepdims)


class Parameter(Tensor):
    """Learnable leaf; ``grad`` accumulates across backward calls."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name="param"):
        super().__init__(np.array(data, copy=True), op="param", requires_grad=True)
        self.requires_grad = True
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def zero_grad(params):
    for p in params:
        p.zero_grad()


def backward(root):
    """Accumulate d(root)/d(param) into every participating Parameter."""
    if root.data.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- broadcasting

def _is_trailing(small, big):
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + tuple(shape)).sum(axis=0) if lead > 0 else g


def _binary_shapes(a, b, opname):
    if a.shape == b.shape or _is_trailing(b.shape, a.shape) or _is_trailing(a.shape, b.shape):
        return
    raise DimensionError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor(a.data + c, (a,), lambda g: (g,), "add_scalar")
    if not isinstance(a, Tensor):
        return add(b, a)
    _binary_shapes(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def neg(a):
    return Tensor(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    _binary_shapes(a, b, "sub")
    sa, sb = a.shape, b.shape
    return Tensor(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def rsub_scalar(a, c):
    """``c - a`` for a python scalar ``c``."""
    return Tensor(float(c) - a.data, (a,), lambda g: (-g,), "rsub_scalar")


def mul(a, b):
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")
    if not isinstance(a, Tensor):
        return mul(b, a)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor(ad * bd, (a, b), bw, "mul")


def matmul(a, b):
    """Matrix product for ``(..., m, k) @ (k, n)`` or matching batched operands."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {ad.shape} x {bd.shape}")
    if bd.ndim == 2:
        k, n = bd.shape

        def bw(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb
    elif ad.shape[:-2] == bd.shape[:-2]:
        def bw(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g
    else:
        raise DimensionError(f"matmul batch extents differ: {ad.shape} x {bd.shape}")
    return Tensor(ad @ bd, (a, b), bw, "matmul")


# ---------------------------------------------------------------- pointwise

def sigmoid(x):
    # tanh form cannot overflow and gives exactly 0.5 at 0
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x):
    y = np.tanh(x.data)
    return Tensor(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x):
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def abs_(x):
    sgn = np.sign(x.data)
    return Tensor(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


_ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def elementwise(tag, x):
    try:
        fn = _ELEMENTWISE[tag]
    except KeyError:
        raise ConfigurationError(f"unknown elementwise op {tag!r}; expected one of {sorted(_ELEMENTWISE)}")
    return fn(x)


def softmax_rows(x):
    """Softmax over the last axis with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor(y, (x,), bw, "softmax")


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    c = x.shape[-1]
    if gain.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs channels {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgain = (g * xhat).reshape(-1, c).sum(axis=0)
        dbias = g.reshape(-1, c).sum(axis=0)
        return dx, dgain, dbias

    return Tensor(xhat * gd + bias.data, (x, gain, bias), bw, "layer_norm")


# ---------------------------------------------------------------- reductions

def sum_all(x):
    shape = x.shape
    return Tensor(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean_all(x):
    shape, n = x.shape, x.data.size
    return Tensor(x.data.mean(), (x,), lambda g: (np.full(shape, g / n, dtype=x.dtype),), "mean")


def mean_axis(x, axis, keepdims=False):
    axis = axis % x.ndim
    n = x.shape[axis]
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return Tensor(x.data.mean(axis=axis, keepdims=keepdims), (x,), bw, "mean_axis")


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return Tensor(y, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                  lambda g: (g.transpose(inv),), "transpose")


def getitem(x, key):
    shape = x.shape

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[key] = g
        return (out,)

    return Tensor(np.array(x.data[key]), (x,), bw, "getitem")


def concat(xs, axis=-1):
    xs = list(xs)
    axis = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != axis
        ):
            raise DimensionError(f"concat: shapes {[t.shape for t in xs]} differ off axis {axis}")
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), bw, "concat")


def stack(xs, axis=0):
    xs = list(xs)
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise DimensionError(f"stack: shapes {[t.shape for t in xs]} differ")

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor(np.stack([x.data for x in xs], axis=axis), tuple(xs), bw, "stack")


def repeat_axis(x, axis, n):
    """Tile a size-1 axis ``n`` times; the gradient sums it back."""
    axis = axis % x.ndim
    if x.shape[axis] != 1:
        raise DimensionError(f"repeat_axis needs extent 1 on axis {axis}, got {x.shape}")
    return Tensor(np.repeat(x.data, n, axis=axis), (x,),
                  lambda g: (g.sum(axis=axis, keepdims=True),), "repeat")


def take_rows(x, idx):
    """Gather rows along axis -2 with per-slice indices ``idx`` (..., u)."""
    shape = x.shape
    ix = idx[..., None]

    def bw(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(out, ix, g, axis=-2)
        return (out,)

    return Tensor(np.take_along_axis(x.data, ix, axis=-2), (x,), bw, "take_rows")


def scatter_rows(base, src, idx):
    """Copy of ``base`` whose rows ``idx`` (unique per slice) are replaced by ``src``."""
    ix = idx[..., None]
    out = base.data.copy()
    np.put_along_axis(out, ix, src.data, axis=-2)

    def bw(g):
        gb = g.copy()
        np.put_along_axis(gb, ix, 0.0, axis=-2)
        return gb, np.take_along_axis(g, ix, axis=-2)

    return Tensor(out, (base, src), bw, "scatter_rows")
