"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Tensors wrap float64 numpy arrays. Every differentiable op records a tape
node (its parents plus a closure that maps the output gradient to input
gradients) whenever gradient recording is enabled and at least one input
requires a gradient. :meth:`Tensor.backward` walks that tape once in reverse
topological order.

Forward and backward arithmetic runs with numpy floating point errors set to
raise, so an op that turns finite inputs into NaN/Inf fails loudly instead of
poisoning training.
"""

from __future__ import annotations

import contextlib
import functools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805
LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0

ACTIVATIONS = ("sigmoid", "tanh", "relu", "leaky_relu", "elu", "selu")

_FP_RAISE = dict(over="raise", invalid="raise", divide="raise", under="ignore")

_state = threading.local()


class ShapeError(ValueError):
    pass


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, optimizer updates)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def make_rng(seed: int | None) -> np.random.Generator:
    """The one RNG constructor used across the package (PCG64, seeded)."""
    return np.random.default_rng(seed)


def _fp_guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(**_FP_RAISE):
            return fn(*args, **kwargs)

    return wrapper


def _require_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"{op}: non-finite value produced")


class Tensor:
    """Dense float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "_retain")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable | None = None, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if op == "leaf":
            _require_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self._retain = False

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def retain_grad(self) -> "Tensor":
        """Keep this non-leaf tensor's gradient after backward."""
        self._retain = True
        return self

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op})"

    # -- operators ----------------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    # -- reverse pass -------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this scalar tensor.

        Leaf tensors with ``requires_grad`` accumulate into ``.grad``; call
        :meth:`zero_grad` (or the optimizer's) to reset them.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that is not on the tape")

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        with np.errstate(**_FP_RAISE):
            for node in reversed(order):
                g = grads.pop(id(node), None)
                if g is None:
                    continue
                if node.is_leaf or node._retain:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                if node._backward is None:
                    continue
                parent_grads = node._backward(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward, op)
    return Tensor(data, False, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- elementwise arithmetic -------------------------------------------------

@_fp_guard
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


@_fp_guard
def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


@_fp_guard
def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward, "mul")


hadamard = mul


@_fp_guard
def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward, "div")


@_fp_guard
def square(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,), "square")


@_fp_guard
def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def backward(g):
        # d sqrt at 0 is unbounded; the subgradient 0 keeps RMSE of a perfect fit trainable
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _node(out, (x,), backward, "sqrt")


@_fp_guard
def tabs(x) -> Tensor:
    x = as_tensor(x)
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


@_fp_guard
def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


# -- activations ------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@_fp_guard
def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _sigmoid(x.data)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


@_fp_guard
def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


@_fp_guard
def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


@_fp_guard
def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data)
    return _node(out, (x,), lambda g: (np.where(mask, g, slope * g),), "leaky_relu")


@_fp_guard
def elu(x, alpha: float = ELU_ALPHA) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    neg = alpha * np.expm1(np.minimum(x.data, 0.0))
    out = np.where(mask, x.data, neg)
    return _node(out, (x,), lambda g: (np.where(mask, g, g * (neg + alpha)),), "elu")


@_fp_guard
def selu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    neg = SELU_ALPHA * np.expm1(np.minimum(x.data, 0.0))
    out = SELU_SCALE * np.where(mask, x.data, neg)

    def backward(g):
        return (SELU_SCALE * np.where(mask, g, g * (neg + SELU_ALPHA)),)

    return _node(out, (x,), backward, "selu")


_ACTIVATION_FNS = {
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "elu": elu,
    "selu": selu,
}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATION_FNS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}") from None
    return fn(x)


# -- reductions and shape ops -------------------------------------------------

def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(out), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return div(tsum(x, axis, keepdims), float(count))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _node(out, (x,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    out = x.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(np.array(out), (x,), backward, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _node(out, ts, backward, "stack")


def take_rows(table, ids) -> Tensor:
    """Row gather ``table[ids]``; the gradient scatters back into the selected rows only."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _node(out, (table,), backward, "take_rows")


# -- linear algebra -----------------------------------------------------------

@_fp_guard
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != (b.shape[-2] if b.ndim > 1 else b.shape[0]):
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)
    _require_finite(out, "matmul")

    def backward(g):
        ad, bd = a.data, b.data
        ga = gb = None
        if a.requires_grad:
            if bd.ndim == 1:
                ga = np.multiply.outer(g, bd) if ad.ndim > 1 else g * bd
            else:
                ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            ga = _unbroadcast(ga, a.shape)
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.multiply.outer(ad, g)
            elif bd.ndim == 1:
                gb = np.matmul(np.swapaxes(ad, -1, -2), g[..., None])[..., 0]
            else:
                gb = np.matmul(np.swapaxes(ad, -1, -2), g)
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _node(out, (a, b), backward, "matmul")


@_fp_guard
def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward, "softmax")


# -- convolution, pooling, upsampling -----------------------------------------

def conv_output_size(size: int, f: int, stride: int, padding: str) -> tuple[int, int, int]:
    """Output length and (before, after) zero padding along one axis."""
    if padding == "same":
        out = -(-size // stride)
        total = max((out - 1) * stride + f - size, 0)
        return out, total // 2, total - total // 2
    if padding == "valid":
        if f > size:
            raise ShapeError(f"conv2d: kernel {f} larger than input {size}")
        return (size - f) // stride + 1, 0, 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


@_fp_guard
def conv2d(x, k, b=None, stride: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation (no kernel flip) plus per-filter bias.

    ``x`` is ``(C, H, W)`` or batched ``(N, C, H, W)``; ``k`` is
    ``(K, C, F, F)``; ``b`` is ``(K,)``.
    """
    x, k = as_tensor(x), as_tensor(k)
    b = as_tensor(b) if b is not None else None
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or k.ndim != 4:
        raise ShapeError(f"conv2d: expected (N,)C,H,W input and K,C,F,F kernel, got {x.shape}, {k.shape}")
    n, c, h, w = xd.shape
    nk, kc, f, f2 = k.shape
    if kc != c or f != f2:
        raise ShapeError(f"conv2d: kernel {k.shape} does not match input channels {c}")
    ho, pt, pb = conv_output_size(h, f, stride, padding)
    wo, pl, pr = conv_output_size(w, f, stride, padding)
    if f > h + pt + pb or f > w + pl + pr:
        raise ShapeError(f"conv2d: kernel {f}x{f} larger than padded input")
    if pt or pb or pl or pr:
        xp = np.zeros((n, c, h + pt + pb, w + pl + pr))
        xp[:, :, pt:pt + h, pl:pl + w] = xd
    else:
        xp = np.ascontiguousarray(xd)
    hp, wp = xp.shape[2], xp.shape[3]
    cols = kernels.im2col(xp, f, stride, ho, wo)
    kmat = k.data.reshape(nk, -1)
    out = (kmat @ cols).reshape(nk, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    _require_finite(out, "conv2d")
    if single:
        out = out[0]

    def backward(g):
        g4 = g[None] if single else g
        gm = np.ascontiguousarray(g4.transpose(1, 0, 2, 3)).reshape(nk, -1)
        gx = gk = gb = None
        if k.requires_grad:
            gk = (gm @ cols.T).reshape(k.shape)
        if b is not None and b.requires_grad:
            gb = g4.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dcols = np.ascontiguousarray(kmat.T @ gm)
            dxp = kernels.col2im(dcols, n, c, hp, wp, f, stride, ho, wo)
            gx = dxp[:, :, pt:pt + h, pl:pl + w]
            gx = gx[0] if single else gx
        return (gx, gk, gb) if b is not None else (gx, gk)

    parents = (x, k, b) if b is not None else (x, k)
    return _node(out, parents, backward, "conv2d")


def maxpool2x2(x) -> Tensor:
    """2x2 / stride-2 max pooling with ceil mode for odd sizes."""
    x = as_tensor(x)
    single = x.ndim == 3
    xd = np.ascontiguousarray(x.data[None] if single else x.data)
    if xd.ndim != 4 or xd.shape[2] < 1 or xd.shape[3] < 1:
        raise ShapeError(f"maxpool2x2: bad input shape {x.shape}")
    h, w = xd.shape[2:]
    out, argmax = kernels.maxpool2x2_forward(xd)

    def backward(g):
        g4 = np.ascontiguousarray(g[None] if single else g)
        dx = kernels.maxpool2x2_backward(g4, argmax, h, w)
        return (dx[0] if single else dx,)

    return _node(out[0] if single else out, (x,), backward, "maxpool2x2")


def upsample2x2(x, target_hw: tuple[int, int] | None = None) -> Tensor:
    """Nearest-neighbour 2x upsampling, optionally cropped to ``target_hw``."""
    x = as_tensor(x)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    h, w = xd.shape[2:]
    th, tw = (2 * h, 2 * w) if target_hw is None else target_hw
    if not (2 * h - 1 <= th <= 2 * h and 2 * w - 1 <= tw <= 2 * w):
        raise ShapeError(f"upsample2x2: target {target_hw} outside [{2*h-1},{2*h}]x[{2*w-1},{2*w}]")
    out = xd.repeat(2, axis=2).repeat(2, axis=3)[:, :, :th, :tw]
    out = np.ascontiguousarray(out)

    def backward(g):
        g4 = np.ascontiguousarray(g[None] if single else g)
        dx = kernels.upsample2x2_backward(g4, h, w)
        return (dx[0] if single else dx,)

    return _node(out[0] if single else out, (x,), backward, "upsample2x2")


def numerical_grad(fn: Callable[[], float], arr: np.ndarray, eps: float = 1e-5,
                   indices: Iterable | None = None) -> np.ndarray:
    """Central finite differences of ``fn`` w.r.t. ``arr`` (mutated in place, restored)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad
