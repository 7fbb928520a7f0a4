"""Minimal reverse-mode differentiation engine on numpy arrays.

Training runs in float32; gradient-check tests build float64 graphs (the
dtype of an op follows its inputs). Reductions use numpy's fixed row-major
order, so single-threaded runs are bit-reproducible.

Convolution is evaluated as an im2col matrix product; its input gradient is
reassembled with one strided slice-add per kernel tap, which keeps the whole
backward pass inside BLAS/vector code.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    """N-D array node in the backward graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw arrays, not Tensors")
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(DEFAULT_DTYPE)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(data) if requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self):
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        return out

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _result(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _result(data, (a, b), backward_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _result(data, (a, b), backward_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, (a, b), backward_fn)


def scale(a, c):
    c = float(c)
    data = a.data * np.asarray(c, dtype=a.data.dtype)

    def backward_fn(g):
        _accumulate(a, g * c)

    return _result(data, (a,), backward_fn)


def relu(a):
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0).astype(a.data.dtype)

    def backward_fn(g):
        _accumulate(a, g * mask)

    return _result(data, (a,), backward_fn)


def sigmoid(a):
    x = a.data
    # stable in both tails
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    z[~pos] = e / (1.0 + e)

    def backward_fn(g):
        _accumulate(a, g * z * (1.0 - z))

    return _result(z, (a,), backward_fn)


def log(a):
    data = np.log(a.data)

    def backward_fn(g):
        _accumulate(a, g / a.data)

    return _result(data, (a,), backward_fn)


def absolute(a):
    data = np.abs(a.data)
    sign = np.sign(a.data)

    def backward_fn(g):
        _accumulate(a, g * sign)

    return _result(data, (a,), backward_fn)


def clamp(a, lo, hi):
    data = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def backward_fn(g):
        _accumulate(a, g * inside)

    return _result(data, (a,), backward_fn)


def tsum(a, axis=None):
    data = np.asarray(a.data.sum(axis=axis))

    def backward_fn(g):
        if axis is None:
            grad = np.broadcast_to(g, a.data.shape)
        else:
            grad = np.broadcast_to(np.expand_dims(g, axis), a.data.shape)
        _accumulate(a, grad.astype(a.data.dtype, copy=True))

    return _result(data, (a,), backward_fn)


def tmean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def backward_fn(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _result(data, (a,), backward_fn)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def backward_fn(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _result(data, (a, b), backward_fn)


def concat_channels(tensors):
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    if len({t.data.shape[0] for t in tensors}) != 1 or len({t.data.shape[2:] for t in tensors}) != 1:
        raise ValueError(f"concat_channels shape mismatch: {[t.data.shape for t in tensors]}")
    data = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.data.shape[1] for t in tensors])[:-1]

    def backward_fn(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            _accumulate(t, piece)

    return _result(data, tuple(tensors), backward_fn)


def slice_channels(a, start, stop):
    """Channel slice [:, start:stop] of an (N, C, H, W) tensor."""
    data = a.data[:, start:stop]

    def backward_fn(g):
        grad = np.zeros_like(a.data)
        grad[:, start:stop] = g
        _accumulate(a, grad)

    return _result(data, (a,), backward_fn)


def global_avg_pool(a):
    """(N, C, H, W) -> (N, C) spatial mean."""
    n, c, h, w = a.data.shape
    data = a.data.mean(axis=(2, 3))

    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g[:, :, None, None], a.data.shape) / (h * w))

    return _result(data, (a,), backward_fn)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(x, kh, kw, stride, pad):
    """Patch matrix in (C*kh*kw, N*OH*OW) layout for a single fat GEMM."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, c, kh, kw, oh, ow), (s0, s1, s2, s3, s2 * stride, s3 * stride)
    )
    cols = view.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * oh * ow)
    return cols, (oh, ow), x.shape


def conv2d(x, w, b=None, stride=1, pad=0):
    """Cross-correlation with zero padding. Kernel sizes must be odd."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weight, got {x.data.shape}, {w.data.shape}")
    oc, ic, kh, kw = w.data.shape
    if x.data.shape[1] != ic:
        raise ValueError(f"conv2d channel mismatch: input {x.data.shape[1]}, weight {ic}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel sizes must be odd, got {(kh, kw)}")
    if b is not None and b.data.shape != (oc,):
        raise ValueError(f"conv2d bias must have shape ({oc},), got {b.data.shape}")

    n = x.data.shape[0]
    cols, (oh, ow), padded_shape = _im2col(x.data, kh, kw, stride, pad)
    w2 = w.data.reshape(oc, ic * kh * kw)
    out = w2 @ cols  # (oc, n*oh*ow)
    if b is not None:
        out += b.data[:, None]
    data = np.ascontiguousarray(out.reshape(oc, n, oh, ow).transpose(1, 0, 2, 3))
    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(oc, n * oh * ow)
        if b is not None:
            _accumulate(b, g2.sum(axis=1))
        if w.requires_grad:
            _accumulate(w, (g2 @ cols.T).reshape(w.data.shape))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(ic, kh, kw, n, oh, ow).transpose(3, 0, 1, 2, 4, 5)
            dxp = np.zeros(padded_shape, dtype=g.dtype)
            for i in range(kh):
                rows = slice(i, i + stride * oh, stride)
                for j in range(kw):
                    dxp[:, :, rows, j : j + stride * ow : stride] += dcols[:, :, i, j]
            if pad:
                dxp = dxp[:, :, pad:-pad, pad:-pad]
            _accumulate(x, dxp)

    return _result(data, parents, backward_fn)


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm2d(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over (N, H, W).

    ``running_mean``/``running_var`` are plain arrays mutated in place when
    training (running variance uses the unbiased estimate).
    """
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError("batchnorm2d affine parameters must have shape (C,)")
    if training:
        m = n * h * w
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).astype(x.data.dtype)
        xhat = (x.data - running_mean[None, :, None, None]) * inv_std[None, :, None, None]
    data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward_fn(g):
        _accumulate(beta, g.sum(axis=(0, 2, 3)))
        _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            m = n * h * w
            sum_dxhat = dxhat.sum(axis=(0, 2, 3))
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3))
            dx = (
                dxhat
                - (sum_dxhat / m)[None, :, None, None]
                - xhat * (sum_dxhat_xhat / m)[None, :, None, None]
            ) * inv_std[None, :, None, None]
        else:
            dx = dxhat * inv_std[None, :, None, None]
        _accumulate(x, dx)

    return _result(data.astype(x.data.dtype), (x, gamma, beta), backward_fn)


# ---------------------------------------------------------------------------
# bilinear 2x upsampling
# ---------------------------------------------------------------------------
# Output pixel o samples input coordinate (o + 0.5) / 2 - 0.5, clamped, so
# along each axis: out[2i] = 0.25 in[i-1] + 0.75 in[i] and
# out[2i+1] = 0.75 in[i] + 0.25 in[i+1] with clamped ends.

def _up1d(arr):
    """Upsample the last axis by 2 with the half-pixel-centers weights."""
    left = np.concatenate([arr[..., :1], arr[..., :-1]], axis=-1)
    right = np.concatenate([arr[..., 1:], arr[..., -1:]], axis=-1)
    even = 0.25 * left + 0.75 * arr
    odd = 0.75 * arr + 0.25 * right
    out_shape = arr.shape[:-1] + (2 * arr.shape[-1],)
    out = np.empty(out_shape, dtype=arr.dtype)
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


def _up1d_backward(g):
    """Transpose of _up1d along the last axis."""
    din = 0.75 * g[..., 0::2] + 0.75 * g[..., 1::2]
    din[..., :-1] += 0.25 * g[..., 2::2]
    din[..., 1:] += 0.25 * g[..., 1:-1:2]
    din[..., 0] += 0.25 * g[..., 0]
    din[..., -1] += 0.25 * g[..., -1]
    return din


def bilinear_upsample2x(a):
    """Double both spatial dimensions of an (N, C, H, W) tensor."""
    if a.data.ndim != 4 or a.data.shape[2] < 2 or a.data.shape[3] < 2:
        raise ValueError(f"bilinear_upsample2x needs (N, C, H>=2, W>=2), got {a.data.shape}")
    rows_up = np.swapaxes(_up1d(np.swapaxes(a.data, 2, 3)), 2, 3)
    data = _up1d(rows_up)

    def backward_fn(g):
        g_rows = _up1d_backward(g)
        _accumulate(a, np.swapaxes(_up1d_backward(np.swapaxes(g_rows, 2, 3)), 2, 3))

    return _result(data, (a,), backward_fn)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss):
    """Populate gradients of every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    # iterative depth-first topological sort
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

class Adam:
    """Bias-corrected Adam over a list of parameter tensors."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / bias1
            v_hat = v / bias2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


def lr_schedule(epoch, lr0=5e-4, half_every=20):
    """Learning rate halved every ``half_every`` epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return lr0 * 0.5 ** (epoch // half_every)


# ---------------------------------------------------------------------------
# finite-difference gradient checking (float64 shadow mode)
# ---------------------------------------------------------------------------

def gradcheck(build, tensors, h=1e-3, floor=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``build()`` must reconstruct the scalar loss graph from ``tensors``
    (float64 leaves) on every call.
    """
    for t in tensors:
        t.zero_grad()
    loss = build()
    backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        fd = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            hi = float(build().data)
            flat[i] = keep - h
            lo = float(build().data)
            flat[i] = keep
            fd[i] = (hi - lo) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic.reshape(-1))), floor)
        rel = np.abs(fd - analytic.reshape(-1)) / denom
        worst = max(worst, float(rel.max()))
    return worst
