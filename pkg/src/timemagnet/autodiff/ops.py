"""Differentiable primitives.

Every function takes :class:`Tensor` (or array-like) operands and returns a new
tensor; gradients are defined by the closure handed to :func:`record`.
Broadcasting follows numpy's trailing-dimension rule with size-1 expansion.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, record

GELU_C = math.sqrt(2.0 / math.pi)  # tanh approximation


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, kind: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd,
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return record("div", (a, b), out,
                  lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def ew_binary(a, b, kind: str) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul, "div": div}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("pow", (x,), xd ** p, lambda g: (g * p * xd ** (p - 1),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return record("exp", (x,), out, lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return record("log", (x,), np.log(xd), lambda g: (g / xd,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return record("sqrt", (x,), out, lambda g: (g * 0.5 / out,))


def clip(x, lo=None, hi=None) -> Tensor:
    """Clamp values; the gradient passes only where the input lies inside the range."""
    x = as_tensor(x)
    xd = x.data
    out = np.clip(xd, lo, hi)
    inside = np.ones_like(xd, dtype=bool)
    if lo is not None:
        inside &= xd >= lo
    if hi is not None:
        inside &= xd <= hi
    return record("clip", (x,), out, lambda g: (g * inside,))


# -- matmul ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} are not broadcastable") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return record("matmul", (a, b), ad @ bd, back)


# -- activations ----------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record("relu", (x,), x.data * mask, lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope)
    return record("leaky_relu", (x,), x.data * scale, lambda g: (g * scale,))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    neg = alpha * np.expm1(np.minimum(xd, 0.0))
    out = np.where(xd > 0, xd, neg)
    d = np.where(xd > 0, 1.0, neg + alpha)
    return record("elu", (x,), out, lambda g: (g * d,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return record("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    s = _sigmoid(xd)
    return record("silu", (x,), xd * s, lambda g: (g * (s + xd * s * (1.0 - s)),))


def gelu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    inner = GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)
    d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
    return record("gelu", (x,), out, lambda g: (g * d,))


_ACTIVATIONS = {
    "relu": relu, "gelu": gelu, "sigmoid": sigmoid, "silu": silu,
    "tanh": tanh, "leaky_relu": leaky_relu, "elu": elu,
}


def activation(x, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return record("softmax", (x,), y,
                  lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return record("log_softmax", (x,), out,
                  lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# -- reductions -----------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axes(axis, x.ndim)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", (x,), x.data.sum(axis=axes, keepdims=keepdims), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / n)


def max(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Maximum along ``axis``; the gradient goes to the first arg-max only."""
    x = as_tensor(x)
    xd = x.data
    if axis is None:
        flat = xd.reshape(-1)
        i = int(flat.argmax())

        def back_all(g):
            out = np.zeros(flat.shape)
            out[i] = g.reshape(-1)[0]
            return (out.reshape(xd.shape),)

        val = flat[i].reshape((1,) * xd.ndim if keepdims else ())
        return record("max", (x,), val, back_all)
    ax = axis % xd.ndim
    idx = np.expand_dims(xd.argmax(axis=ax), ax)
    val = np.take_along_axis(xd, idx, axis=ax)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        out = np.zeros_like(xd)
        np.put_along_axis(out, idx, g, axis=ax)
        return (out,)

    return record("max", (x,), val if keepdims else np.squeeze(val, ax), back)


# -- shape ----------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return record("transpose", (x,), np.transpose(x.data, axes), lambda g: (np.transpose(g, inv),))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    basic = _is_basic(index)

    def back(g):
        out = np.zeros(shape)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return record("getitem", (x,), x.data[index], back)


def index_add(n_rows: int, index: np.ndarray, src) -> Tensor:
    """Scatter-add rows of ``src`` into a zero tensor with ``n_rows`` rows."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((n_rows,) + src.shape[1:])
    np.add.at(out, index, src.data)
    return record("index_add", (src,), out, lambda g: (g[index],))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    return record("concat", tuple(tensors), data, lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}") from None
    ax = axis % data.ndim
    return record("stack", tuple(tensors), data,
                  lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))))


def flip(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return record("flip", (x,), np.flip(x.data, axis).copy(), lambda g: (np.flip(g, axis).copy(),))


# -- convolution and pooling ------------------------------------------------

def _conv_windows(xp: np.ndarray, k: int) -> np.ndarray:
    # (N, C, H, W, k, k) -> (N, H, W, C*k*k)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    n, c, h, w = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h, w, c * k * k)


def conv2d(x, weight, bias=None, padding: int = 1) -> Tensor:
    """Stride-1 2-D convolution. x: N×C×H×W, weight: O×C×k×k."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {ci}")
    if k != k2 or k > h + 2 * padding or k > w + 2 * padding:
        raise ShapeError(f"conv2d: kernel {weight.shape[2:]} does not fit input {(h, w)} with padding {padding}")
    xd, wd = x.data, weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _conv_windows(xp, k)
    wmat = wd.reshape(o, c * k * k)
    out = (cols @ wmat.T).transpose(0, 3, 1, 2)
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, o, 1, 1)
        inputs.append(bias)
    ho, wo = out.shape[2:]

    def back(g):
        gt = g.transpose(0, 2, 3, 1)  # N, H', W', O
        gw = (gt.reshape(-1, o).T @ cols.reshape(-1, c * k * k)).reshape(wd.shape)
        pad = k - 1 - padding
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        gcols = _conv_windows(gp, k)  # N, H, W, O*k*k
        wflip = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, o * k * k)
        gx = (gcols @ wflip.T).transpose(0, 3, 1, 2)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    assert (ho, wo) == (h + 2 * padding - k + 1, w + 2 * padding - k + 1)
    return record("conv2d", tuple(inputs), out, back)


def max_pool2x2(x) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return record("max_pool2x2", (x,), out, back)


def global_avg_pool(x) -> Tensor:
    return mean(x, axis=(2, 3), keepdims=True)


def pool2d(x, kind: str) -> Tensor:
    if kind == "max2x2":
        return max_pool2x2(x)
    if kind == "global_avg":
        return global_avg_pool(x)
    raise ValueError(f"unknown pool kind {kind!r}")
