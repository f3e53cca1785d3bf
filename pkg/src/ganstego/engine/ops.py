"""Differentiable primitives used by the ACGAN networks.

Layout is row-major N, C, H, W throughout. Convolution kernels are
``[F, C, kH, kW]`` for :func:`conv2d` and ``[C, F, kH, kW]`` for
:func:`conv2d_transpose` (the adjoint shares the kernel of the forward conv).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, default_dtype


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else default_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


# elementwise -------------------------------------------------------------------


def _pair(a, b):
    # plain numbers take the dtype of the tensor operand
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._make(a.data + b.data, (a, b), "add", lambda g: ((a, g), (b, g)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return Tensor._make(a.data - b.data, (a, b), "sub", lambda g: ((a, g), (b, -g)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        s = a.data.dtype.type(b)
        return Tensor._make(a.data * s, (a,), "scale", lambda g: ((a, g * s),))
    a, b = _pair(a, b)
    return Tensor._make(a.data * b.data, (a, b), "mul",
                        lambda g: ((a, g * b.data), (b, g * a.data)))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return Tensor._make(out, (a,), "pow",
                        lambda g: ((a, g * exponent * a.data ** (exponent - 1)),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), "exp", lambda g: ((a, g * out),))


def log(a: Tensor) -> Tensor:
    return Tensor._make(np.log(a.data), (a,), "log", lambda g: ((a, g / a.data),))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the input was inside."""
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return Tensor._make(out, (a,), "clip", lambda g: ((a, g * inside),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    np.clip(out, np.finfo(out.dtype).tiny, _open_unit(out.dtype), out=out)
    return Tensor._make(out, (a,), "sigmoid", lambda g: ((a, g * out * (1.0 - out)),))


def _open_unit(dtype):
    # largest float below 1: keeps saturated activations inside the open range
    return np.nextafter(dtype.type(1), dtype.type(0))


def tanh(a: Tensor) -> Tensor:
    top = _open_unit(a.data.dtype)
    out = np.clip(np.tanh(a.data), -top, top)
    return Tensor._make(out, (a,), "tanh", lambda g: ((a, g * (1.0 - out * out)),))


def leaky_relu(a: Tensor, negative_slope: float = 0.2) -> Tensor:
    """``x`` where ``x >= 0`` else ``negative_slope * x``.

    At exactly zero the positive branch is used for the derivative.
    """
    if not 0.0 < negative_slope < 1.0:
        raise ValueError("negative_slope must lie in (0, 1)")
    slope = a.data.dtype.type(negative_slope)
    out = np.maximum(a.data, a.data * slope)

    def backward(g):
        return ((a, np.where(a.data >= 0, g, g * slope)),)

    return Tensor._make(out, (a,), "leaky_relu", backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return ((a, out * (g - (g * out).sum(axis=axis, keepdims=True))),)

    return Tensor._make(out, (a,), "softmax", backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return ((a, g - np.exp(out) * g.sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (a,), "log_softmax", backward)


# reductions and shape ----------------------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape)),)

    return Tensor._make(out, (a,), "sum", backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = a.data.reshape(shape)
    return Tensor._make(out, (a,), "reshape", lambda g: ((a, g.reshape(a.shape)),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        parts = np.split(g, bounds[1:-1], axis=axis)
        return tuple(zip(tensors, parts))

    return Tensor._make(out, tensors, "concat", backward)


def pick(a: Tensor, index: np.ndarray) -> Tensor:
    """Row-wise gather ``a[i, index[i]]`` of a 2-d tensor."""
    index = np.asarray(index)
    rows = np.arange(a.shape[0])
    out = a.data[rows, index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[rows, index] = g
        return ((a, full),)

    return Tensor._make(out, (a,), "pick", backward)


# linear -------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return Tensor._make(a.data @ b.data, (a, b), "matmul",
                        lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)))


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` for ``x[N, D]``, ``weight[D, M]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"dense: bias {bias.shape} does not match {weight.shape[1]} outputs")
    out = x.data @ weight.data + bias.data

    def backward(g):
        return ((x, g @ weight.data.T), (weight, x.data.T @ g), (bias, g.sum(axis=0)))

    return Tensor._make(out, (x, weight, bias), "dense", backward)


# convolution -------------------------------------------------------------------
#
# conv2d is an im2col gather followed by one GEMM; its input adjoint (which is
# also the forward map of conv2d_transpose) is one GEMM followed by a
# col2im scatter-add over the kH*kW kernel offsets.


def _out_size(n: int, k: int, stride: int) -> int:
    return (n - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Rows ``(n, y, x)``, columns ``(i, j, c)`` of every receptive field."""
    n, c, h, w = xp.shape
    oh, ow = _out_size(h, kh, stride), _out_size(w, kw, stride)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return win.transpose(0, 2, 3, 4, 5, 1).reshape(n * oh * ow, kh * kw * c)


def _to_rows(g: np.ndarray) -> np.ndarray:
    n, f, h, w = g.shape
    return g.transpose(0, 2, 3, 1).reshape(n * h * w, f)


def _kernel_matrix(w: np.ndarray) -> np.ndarray:
    """``[F, C, kH, kW]`` -> ``[F, kH*kW*C]`` matching the im2col column order."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _from_rows(rows: np.ndarray, n: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(rows.reshape(n, h, w, -1).transpose(0, 3, 1, 2))


def _correlate(xp: np.ndarray, w: np.ndarray, stride: int, cols=None) -> np.ndarray:
    """out[n,f,y,x] = sum_{c,i,j} xp[n,c,y*s+i,x*s+j] * w[f,c,i,j] (no padding)."""
    n, _, h, wd = xp.shape
    f, _, kh, kw = w.shape
    if cols is None:
        cols = _im2col(xp, kh, kw, stride)
    rows = cols @ _kernel_matrix(w).T
    return _from_rows(rows, n, _out_size(h, kh, stride), _out_size(wd, kw, stride))


def _scatter(g: np.ndarray, w: np.ndarray, stride: int, out_hw: tuple) -> np.ndarray:
    """Adjoint of :func:`_correlate` w.r.t. its input: scatter g through w."""
    n, f, oh, ow = g.shape
    _, c, kh, kw = w.shape
    cols = (_to_rows(g) @ _kernel_matrix(w)).reshape(n, oh, ow, kh, kw, c)
    out = np.zeros((n, out_hw[0], out_hw[1], c), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride, :] \
                += cols[:, :, :, i, j, :]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _kernel_grad(g: np.ndarray, cols: np.ndarray, kshape: tuple) -> np.ndarray:
    """Adjoint of :func:`_correlate` w.r.t. the kernel, given the im2col of its input."""
    f, c, kh, kw = kshape
    return (_to_rows(g).T @ cols).reshape(f, kh, kw, c).transpose(0, 3, 1, 2)


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _crop(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[N,C,H,W]`` with ``kernel[F,C,kH,kW]``."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and kernel")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"conv2d: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    _, _, h, w = x.shape
    kh, kw = kernel.shape[2:]
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input")
    xp = _pad(x.data, padding)
    cols = _im2col(xp, kh, kw, stride)
    out = _correlate(xp, kernel.data, stride, cols)

    def backward(g):
        gx = _crop(_scatter(g, kernel.data, stride, xp.shape[2:]), padding)
        gk = _kernel_grad(g, cols, kernel.shape)
        return ((x, gx), (kernel, gk))

    return Tensor._make(out, (x, kernel), "conv2d", backward)


def conv2d_transpose(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Fractional-strided convolution; adjoint of :func:`conv2d` with the same kernel.

    ``kernel`` is ``[C, F, kH, kW]`` and the output side is
    ``(H - 1) * stride - 2 * padding + kH``.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d_transpose expects 4-d input and kernel")
    if x.shape[1] != kernel.shape[0]:
        raise DimensionError(
            f"conv2d_transpose: input has {x.shape[1]} channels, kernel expects {kernel.shape[0]}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    _, _, h, w = x.shape
    kh, kw = kernel.shape[2:]
    full = ((h - 1) * stride + kh, (w - 1) * stride + kw)
    if full[0] - 2 * padding <= 0 or full[1] - 2 * padding <= 0:
        raise DimensionError("conv2d_transpose: computed output size is not positive")
    out = _crop(_scatter(x.data, kernel.data, stride, full), padding)
    out = np.ascontiguousarray(out)

    def backward(g):
        gp = _pad(g, padding)
        cols = _im2col(gp, kh, kw, stride)
        gx = _correlate(gp, kernel.data, stride, cols)
        gk = _kernel_grad(x.data, cols, kernel.shape)
        return ((x, gx), (kernel, gk))

    return Tensor._make(out, (x, kernel), "conv2d_transpose", backward)


# normalization -----------------------------------------------------------------


class BatchNormStats:
    """Running mean/variance for one batch-norm layer."""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=None):
        dtype = dtype or default_dtype()
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormStats,
               training: bool = True, update_stats: bool = True) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In training mode batch moments are used (and folded into ``stats`` by an
    exponential moving average when ``update_stats``); in inference mode the
    running moments are used.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: {c} channels but gamma {gamma.shape}, beta {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    eps = stats.eps
    if training:
        if x.shape[0] < 2:
            raise DimensionError("batch_norm in training mode needs at least 2 samples")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats:
            m = stats.momentum
            count = x.data.size // c
            unbiased = var * (count / max(count - 1, 1))
            stats.mean = (m * stats.mean + (1 - m) * mu).astype(stats.mean.dtype)
            stats.var = (m * stats.var + (1 - m) * unbiased).astype(stats.var.dtype)
    else:
        mu, var = stats.mean.astype(x.dtype), stats.var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(bshape)
        if training:
            m = x.data.size // c
            gx = (inv.reshape(bshape) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            gx = gxhat * inv.reshape(bshape)
        return ((x, gx), (gamma, ggamma), (beta, gbeta))

    return Tensor._make(out, (x, gamma, beta), "batch_norm", backward)


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list:
    """Backpropagate ``loss`` and return one gradient per parameter.

    Parameters the loss does not reach get an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    for p in params:
        p.grad = None
    if loss.requires_grad:
        loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
