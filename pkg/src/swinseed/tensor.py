"""Dense numpy tensors with a small reverse-mode autodiff engine.

Every op builds a node holding its parents and a closure that maps the
output gradient to one gradient per parent. ``Tensor.backward`` walks the
graph in reverse topological order and sums gradients across fan-out.

Graph recording is skipped inside :func:`no_grad` (thread-local) and when no
input requires a gradient.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .exceptions import ConfigurationError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "GradCheckReport",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "relu",
    "gelu",
    "sigmoid",
    "clip",
    "sum_",
    "mean",
    "max_",
    "reshape",
    "transpose",
    "getitem",
    "concat",
    "roll",
    "matmul",
    "linear",
    "softmax",
    "layer_norm",
    "l2_normalize",
    "conv2d",
    "bilinear_resize",
    "bilinear_matrix",
    "grad_check",
]

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording for the current thread."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    """An n-dimensional float array with an optional gradient record.

    Parameters
    ----------
    data : array_like
        Values. Non-float input is cast to float32.
    requires_grad : bool, default=False
        Whether ``backward`` should populate ``grad`` for this tensor.
    dtype : numpy dtype, optional
        Force a dtype (float32 or float64).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    # -- autodiff ------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(t) into ``t.grad`` for every upstream t."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without a seed gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        if not self.requires_grad:
            return

        order = _topological_order(self)
        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # -- operators -----------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absolute(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def _topological_order(root):
    order, seen = [], set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward, op):
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
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


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


# -- elementwise -------------------------------------------------------
def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _pair(a, b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(a.data / b.data, (a, b), backward, "div")


def neg(x):
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def power(x, exponent):
    p = float(exponent)
    out = x.data**p

    def backward(g):
        return (g * p * x.data ** (p - 1.0),)

    return _make(out, (x,), backward, "pow")


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def absolute(x):
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x):
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = (x.data * cdf).astype(x.dtype, copy=False)

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return ((g * (cdf + x.data * pdf)).astype(x.dtype, copy=False),)

    return _make(out, (x,), backward, "gelu")


def sigmoid(x):
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(x, low, high):
    out = np.clip(x.data, low, high)
    inside = (x.data >= low) & (x.data <= high)
    return _make(out, (x,), lambda g: (g * inside,), "clip")


# -- reductions --------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand_reduced(g, shape, axes, keepdims):
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        return (np.array(_expand_reduced(g, x.shape, axes, keepdims)),)

    return _make(out, (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        return (np.array(_expand_reduced(g, x.shape, axes, keepdims)) / count,)

    return _make(out, (x,), backward, "mean")


def max_(x, axis=None, keepdims=False):
    """Max reduction; ties share the gradient equally."""
    axes = _norm_axes(axis, x.ndim)
    kept = x.data.max(axis=axes, keepdims=True)
    out = kept if keepdims else np.squeeze(kept, axis=axes)

    def backward(g):
        mask = x.data == kept
        share = mask / mask.sum(axis=axes, keepdims=True)
        return (_expand_reduced(g, x.shape, axes, keepdims) * share,)

    return _make(out, (x,), backward, "max")


# -- shape -------------------------------------------------------------
def reshape(x, shape):
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return _make(out, (x,), lambda g: (g.transpose(inverse),), "transpose")


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x, index):
    out = x.data[index]
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (x,), backward, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward, "concat")


def roll(x, shift, axis):
    out = np.roll(x.data, shift, axis=axis)
    if isinstance(shift, (tuple, list)):
        back = tuple(-s for s in shift)
    else:
        back = -shift
    return _make(out, (x,), lambda g: (np.roll(g, back, axis=axis),), "roll")


# -- linear algebra ----------------------------------------------------
def matmul(a, b):
    """Matrix product over the last two axes, batch axes broadcast."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}"
        )
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _make(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"linear expects last axis {weight.shape[1]}, got input {x.shape}"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out.reshape(lead + (weight.shape[0],)), parents, backward, "linear")


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def layer_norm(x, weight, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    out = xhat * weight.data + bias.data
    n = x.shape[-1]

    def backward(g):
        gxhat = g * weight.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, n)
        gw = (flat_g * xhat.reshape(-1, n)).sum(axis=0)
        gb = flat_g.sum(axis=0)
        return gx, gw, gb

    return _make(out, (x, weight, bias), backward, "layer_norm")


def l2_normalize(x, axis=-1, eps=1e-8):
    """Unit vectors along ``axis``; vectors with norm below ``eps`` map to 0."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    live = norm >= eps
    inv = np.where(live, 1.0 / np.where(live, norm, 1.0), 0.0).astype(x.dtype)
    out = x.data * inv

    def backward(g):
        return (inv * (g - out * (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "l2_normalize")


def conv2d(x, weight, bias=None, stride=1, groups=1):
    """Unpadded 2-D cross-correlation.

    ``x`` is (Cin, H, W) or (B, Cin, H, W); ``weight`` is (Cout, Cin/groups,
    kh, kw). ``groups`` is 1 or Cin (depthwise, Cout == Cin).
    """
    if stride < 1:
        raise ConfigurationError(f"stride must be positive, got {stride}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d shapes unsupported: input {x.shape}, weight {weight.shape}")
    _, cin, h, w = xd.shape
    cout, wcin, kh, kw = weight.shape
    depthwise = groups != 1
    if depthwise and (groups != cin or cout != cin or wcin != 1):
        raise ConfigurationError(f"only depthwise grouping is supported, got groups={groups}")
    if wcin * groups != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}")
    if kh > h or kw > w:
        raise ConfigurationError(f"kernel {kh}x{kw} larger than input {h}x{w}")
    if (h - kh) % stride or (w - kw) % stride:
        raise ConfigurationError(
            f"input {h}x{w} with kernel {kh}x{kw} is not divisible by stride {stride}"
        )
    oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
    wd = weight.data
    tiled = kh == kw == stride and not depthwise
    if tiled:
        out, backward_core = _conv_tiled(xd, wd, oh, ow)
    else:
        out, backward_core = _conv_taps(xd, wd, stride, oh, ow, depthwise)
    if bias is not None:
        out += bias.data[:, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g4 = g[None] if squeeze else g
        gx, gw = backward_core(g4, x.requires_grad, weight.requires_grad)
        if gx is not None and squeeze:
            gx = gx[0]
        if bias is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    return _make(out[0] if squeeze else out, parents, backward, "conv2d")


def _conv_tiled(xd, wd, oh, ow):
    # kernel == stride: non-overlapping tiles, one GEMM
    b, cin, _, _ = xd.shape
    cout, _, k, _ = wd.shape
    cols = (
        xd[:, :, : oh * k, : ow * k]
        .reshape(b, cin, oh, k, ow, k)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(b * oh * ow, cin * k * k)
    )
    w2 = wd.reshape(cout, -1)
    out = (cols @ w2.T).reshape(b, oh, ow, cout).transpose(0, 3, 1, 2)

    def backward_core(g4, need_x, need_w):
        g2 = g4.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = None
        if need_x:
            gcols = (g2 @ w2).reshape(b, oh, ow, cin, k, k).transpose(0, 3, 1, 4, 2, 5)
            gx = np.zeros_like(xd)
            gx[:, :, : oh * k, : ow * k] = gcols.reshape(b, cin, oh * k, ow * k)
        if need_w:
            gw = (g2.T @ cols).reshape(wd.shape)
        return gx, gw

    return np.ascontiguousarray(out), backward_core


def _conv_taps(xd, wd, stride, oh, ow, depthwise):
    # general geometry: accumulate one product per kernel tap
    _, _, kh, kw = wd.shape
    spans = {
        (a, b): (slice(a, a + stride * (oh - 1) + 1, stride), slice(b, b + stride * (ow - 1) + 1, stride))
        for a in range(kh)
        for b in range(kw)
    }
    out = np.zeros((xd.shape[0], wd.shape[0], oh, ow), dtype=np.result_type(xd, wd))
    for (a, b), (rs, cs) in spans.items():
        tap = xd[:, :, rs, cs]
        if depthwise:
            out += wd[:, 0, a, b][None, :, None, None] * tap
        else:
            out += np.einsum("oc,bchw->bohw", wd[:, :, a, b], tap)

    def backward_core(g4, need_x, need_w):
        gx = np.zeros_like(xd) if need_x else None
        gw = np.zeros_like(wd) if need_w else None
        for (a, b), (rs, cs) in spans.items():
            if depthwise:
                if need_x:
                    gx[:, :, rs, cs] += wd[:, 0, a, b][None, :, None, None] * g4
                if need_w:
                    gw[:, 0, a, b] = (g4 * xd[:, :, rs, cs]).sum(axis=(0, 2, 3))
            else:
                if need_x:
                    gx[:, :, rs, cs] += np.einsum("oc,bohw->bchw", wd[:, :, a, b], g4)
                if need_w:
                    gw[:, :, a, b] = np.einsum("bohw,bchw->oc", g4, xd[:, :, rs, cs])
        return gx, gw

    return out, backward_core


def bilinear_matrix(n_in, n_out, dtype=np.float64):
    """Interpolation weights mapping ``n_in`` samples to ``n_out``.

    Half-pixel centres: ``src = (dst + 0.5) * n_in / n_out - 0.5``, clamped
    to ``[0, n_in - 1]``. Each row is a convex combination.
    """
    mat = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for d in range(n_out):
        src = min(max((d + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        mat[d, lo] += 1.0 - frac
        mat[d, hi] += frac
    return mat


def bilinear_resize(x, out_h, out_w):
    """Bilinear resampling of the last two axes."""
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"output size must be positive, got {out_h}x{out_w}")
    if x.ndim < 2:
        raise DimensionError(f"bilinear_resize needs >=2-d input, got {x.shape}")
    h, w = x.shape[-2:]
    rows = bilinear_matrix(h, out_h, x.dtype)
    cols = bilinear_matrix(w, out_w, x.dtype)
    out = rows @ x.data @ cols.T

    def backward(g):
        return (rows.T @ g @ cols,)

    return _make(out, (x,), backward, "bilinear_resize")


# -- gradient checking -------------------------------------------------
@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    tolerance: float
    passed: bool


def grad_check(f, x, tol=1e-4, *, eps=1e-5, indices=None, op_name=None):
    """Compare reverse-mode gradients of scalar ``f(x)`` with central differences.

    Parameters
    ----------
    f : callable
        Maps ``x`` (a Tensor) to a scalar Tensor. Inputs it closes over are
        left untouched.
    x : Tensor
        Point of evaluation. Its ``data`` is perturbed in place and restored.
    tol : float, default=1e-4
    eps : float, default=1e-5
        Step relative to ``max(1, |x_i|)``.
    indices : sequence of int, optional
        Flat indices to check; all entries when omitted.
    op_name : str, optional
        Label used in the report and in error messages.

    Returns
    -------
    GradCheckReport
    """
    name = op_name or getattr(f, "__name__", "f")
    x.data = np.ascontiguousarray(x.data)
    x.requires_grad = True
    x.grad = None
    out = f(x)
    _require_finite(out.data, name)
    out.backward()
    analytic = np.zeros(x.size) if x.grad is None else np.asarray(x.grad, dtype=np.float64).reshape(-1)
    _require_finite(analytic, name)

    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    worst = 0.0
    with no_grad():
        for i in idx:
            original = flat[i]
            h = eps * max(1.0, abs(float(original)))
            flat[i] = original + h
            up = float(f(x).data)
            flat[i] = original - h
            down = float(f(x).data)
            flat[i] = original
            numeric = (up - down) / (2.0 * h)
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"{name}: non-finite value under perturbation", component=name)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return GradCheckReport(name, worst, tol, worst <= tol)


def _require_finite(values, name):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{name}: non-finite value encountered", component=name)
