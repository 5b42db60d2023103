"""Differentiable kernels.

Every function takes Tensors (or python scalars where noted), returns a
Tensor, and registers an adjoint closure when grad recording is active.
Layout convention for image tensors is NCHW.  Numerically sensitive kernels
(normalization, cross-entropy) are fused with analytic adjoints and use a
variance floor of 1e-5.
"""

import builtins
import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError
from .tensor import Tensor, as_tensor

VAR_FLOOR = 1e-5


def _const(x, like):
    """Coerce a non-Tensor operand to an ndarray in the dtype of `like`."""
    return np.asarray(x, dtype=like.data.dtype)


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)
# ---------------------------------------------------------------------------

def _binary(name, a, b, fwd, da, db):
    at = isinstance(a, Tensor)
    bt = isinstance(b, Tensor)
    if not at and not bt:
        raise TypeError(f"{name}: at least one Tensor operand required")
    ad = a.data if at else _const(a, b)
    bd = b.data if bt else _const(b, a)
    try:
        np.broadcast_shapes(ad.shape, bd.shape)
    except ValueError:
        raise ShapeMismatchError(name, ad.shape, bd.shape) from None
    out = fwd(ad, bd)
    parents = tuple(t for t in (a, b) if isinstance(t, Tensor))

    def bwd(g):
        grads = []
        if at:
            grads.append(_unbroadcast(da(g, ad, bd), ad.shape))
        if bt:
            grads.append(_unbroadcast(db(g, ad, bd), bd.shape))
        return grads

    return Tensor._result(out, parents, bwd)


def add(a, b):
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def scale(x, c):
    """x * c for a python scalar c (kept off the graph)."""
    x = as_tensor(x)
    c = float(c)
    return Tensor._result(x.data * c, (x,), lambda g: (g * c,))


def neg(x):
    return scale(x, -1.0)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------

_sign_trace = None


@contextlib.contextmanager
def activation_sign_trace(sink):
    """Record leaky_relu input sign masks into `sink` (a list of bytes).

    Finite-difference checks through piecewise-linear paths use this to
    detect evaluations that straddle a kink: if the sign pattern differs
    between the two sides of a central difference, that estimate is invalid.
    """
    global _sign_trace
    prev = _sign_trace
    _sign_trace = sink
    try:
        yield sink
    finally:
        _sign_trace = prev


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    neg_mask = x.data < 0
    if _sign_trace is not None:
        _sign_trace.append(np.packbits(neg_mask.reshape(-1)).tobytes())
    out = np.where(neg_mask, slope * x.data, x.data)

    def bwd(g):
        return (np.where(neg_mask, slope * g, g),)

    return Tensor._result(out, (x,), bwd)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor._result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._result(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,))


def softplus(x):
    """log(1 + e^x), overflow-safe; derivative is sigmoid(x)."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    sig = np.empty_like(x.data)
    pos = x.data >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    sig[~pos] = ex / (1.0 + ex)
    return Tensor._result(out, (x,), lambda g: (g * sig,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return Tensor._result(out, (x,), lambda g: (g * 0.5 / out,))


def sign(x):
    """Elementwise sign with sign(0) = 0.  Gradient is zero almost everywhere,
    and zero is what propagates."""
    x = as_tensor(x)
    return Tensor._result(np.sign(x.data), (x,), lambda g: (None,))


def softabs(x, eps=1e-4):
    """Smooth |x| = sqrt(x^2 + eps); C1 everywhere."""
    return sqrt(add(mul(x, x), eps))


def softmax2(a, b, eps=1e-4):
    """Smooth max(a, b) via 0.5*(a + b + |a-b|_soft)."""
    return scale(add(add(a, b), softabs(sub(a, b), eps)), 0.5)


def softmin2(a, b, eps=1e-4):
    return neg(softmax2(neg(a), neg(b), eps))


# ---------------------------------------------------------------------------
# reductions and structure
# ---------------------------------------------------------------------------

def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy() if np.ndim(g) == 0 or not keepdims
                    else np.broadcast_to(g, x.shape).copy(),)
        g2 = g
        if not keepdims:
            g2 = np.expand_dims(g, axis)
        return (np.broadcast_to(g2, x.shape).copy(),)

    return Tensor._result(np.asarray(out), (x,), bwd)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for a in axes:
            count *= x.shape[a]
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return Tensor._result(out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = np.argsort(axes)
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor._result(out, (x,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._result(out, tuple(tensors), bwd)


def narrow(x, axis, start, length):
    """Contiguous slice of `length` elements along `axis`."""
    x = as_tensor(x)
    idx = [builtins.slice(None)] * x.ndim
    idx[axis] = builtins.slice(start, start + length)
    idx = tuple(idx)
    out = np.ascontiguousarray(x.data[idx])

    def bwd(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return Tensor._result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and convolution
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor._result(out, (a, b), bwd)


def conv2d(x, w, b=None, stride=1, pad=0):
    """2-D convolution (cross-correlation) with zero padding.

    x: (N, Cin, H, W); w: (Cout, Cin, kh, kw); b: (Cout,) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError("conv2d", x.shape, w.shape,
                                 detail="expect NCHW input and OIHW weight")
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    s = int(stride)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise ShapeMismatchError("conv2d", x.shape, w.shape, detail="kernel larger than input")
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1

    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, -1)
    out = cols @ wmat.T
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeMismatchError("conv2d.bias", b.shape, (cout,))
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ wmat).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j]
        dx = dxp[:, :, pad:hp - pad, pad:wp - pad] if pad else dxp
        if b is not None:
            return (np.ascontiguousarray(dx), dw, g2.sum(axis=0))
        return (np.ascontiguousarray(dx), dw)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(out, parents, bwd)


def nearest_upsample(x, factor):
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeMismatchError("nearest_upsample", x.shape, detail="expect NCHW")
    f = int(factor)
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)
    n, c, h, w = x.shape

    def bwd(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return Tensor._result(out, (x,), bwd)


def avg_pool2d(x, k=2):
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % k or w % k:
        raise ShapeMismatchError("avg_pool2d", x.shape, detail=f"extent not divisible by {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
    inv = 1.0 / (k * k)

    def bwd(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) * inv,)

    return Tensor._result(np.ascontiguousarray(out), (x,), bwd)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def instance_normalize(x, eps=VAR_FLOOR):
    """Per-sample, per-channel zero-mean unit-variance over spatial dims."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeMismatchError("instance_normalize", x.shape, detail="expect NCHW")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x.data - mu) / sigma

    def bwd(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gx = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return ((g - gm - xhat * gx) / sigma,)

    return Tensor._result(xhat, (x,), bwd)


def adain(x, style_scale, style_bias, eps=VAR_FLOOR):
    """Adaptive instance normalization.

    style_scale/style_bias: (N, C), applied per channel after normalization.
    adain(x, 1, 0) is plain instance normalization.
    """
    x = as_tensor(x)
    n, c = x.shape[0], x.shape[1]
    ss = as_tensor(style_scale) if isinstance(style_scale, Tensor) else None
    if ss is None:
        ss = Tensor(np.broadcast_to(np.asarray(style_scale, dtype=x.data.dtype), (n, c)).copy())
    sb = as_tensor(style_bias) if isinstance(style_bias, Tensor) else None
    if sb is None:
        sb = Tensor(np.broadcast_to(np.asarray(style_bias, dtype=x.data.dtype), (n, c)).copy())
    if ss.shape != (n, c) or sb.shape != (n, c):
        raise ShapeMismatchError("adain", x.shape, ss.shape, sb.shape,
                                 detail="styles must be (N, C)")
    normed = instance_normalize(x, eps)
    return add(mul(normed, reshape(ss, (n, c, 1, 1))), reshape(sb, (n, c, 1, 1)))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def bilinear_grid_sample(x, grid):
    """Bilinear sampling of x at normalized grid locations.

    x: (N, C, H, W); grid: (N, Ho, Wo, 2) with coordinates in [-1, 1]
    ((-1,-1) is the top-left pixel center, align-corners convention).
    Out-of-range locations clamp to the border.
    """
    x, grid = as_tensor(x), as_tensor(grid)
    if x.ndim != 4 or grid.ndim != 4 or grid.shape[3] != 2 or grid.shape[0] != x.shape[0]:
        raise ShapeMismatchError("bilinear_grid_sample", x.shape, grid.shape)
    n, c, h, w = x.shape
    ho, wo = grid.shape[1], grid.shape[2]

    ix = (grid.data[..., 0] + 1.0) * 0.5 * (w - 1)
    iy = (grid.data[..., 1] + 1.0) * 0.5 * (h - 1)
    x0 = np.floor(ix)
    y0 = np.floor(iy)
    wx = ix - x0
    wy = iy - y0
    x0i = np.clip(x0, 0, w - 1).astype(np.int64)
    x1i = np.clip(x0 + 1, 0, w - 1).astype(np.int64)
    y0i = np.clip(y0, 0, h - 1).astype(np.int64)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.int64)

    flat = x.data.reshape(n, c, h * w)
    idx00 = (y0i * w + x0i).reshape(n, 1, ho * wo)
    idx01 = (y0i * w + x1i).reshape(n, 1, ho * wo)
    idx10 = (y1i * w + x0i).reshape(n, 1, ho * wo)
    idx11 = (y1i * w + x1i).reshape(n, 1, ho * wo)

    def gather(idx):
        return np.take_along_axis(flat, np.broadcast_to(idx, (n, c, ho * wo)), axis=2)

    v00, v01, v10, v11 = gather(idx00), gather(idx01), gather(idx10), gather(idx11)
    wxf = wx.reshape(n, 1, ho * wo)
    wyf = wy.reshape(n, 1, ho * wo)
    top = v00 * (1 - wxf) + v01 * wxf
    bot = v10 * (1 - wxf) + v11 * wxf
    out = (top * (1 - wyf) + bot * wyf).reshape(n, c, ho, wo)

    def bwd(g):
        gf = g.reshape(n, c, ho * wo)
        dx = np.zeros((n, c, h * w), dtype=g.dtype)
        for idx, wgt in ((idx00, (1 - wxf) * (1 - wyf)), (idx01, wxf * (1 - wyf)),
                         (idx10, (1 - wxf) * wyf), (idx11, wxf * wyf)):
            np.add.at(dx, (np.arange(n)[:, None, None], np.arange(c)[None, :, None],
                           np.broadcast_to(idx, (n, c, ho * wo))), gf * wgt)
        # d/d ix, d/d iy of the bilinear combination
        dix = ((v01 - v00) * (1 - wyf) + (v11 - v10) * wyf) * gf
        diy = ((v10 - v00) * (1 - wxf) + (v11 - v01) * wxf) * gf
        dgrid = np.zeros_like(grid.data)
        dgrid[..., 0] = dix.sum(axis=1).reshape(n, ho, wo) * 0.5 * (w - 1)
        dgrid[..., 1] = diy.sum(axis=1).reshape(n, ho, wo) * 0.5 * (h - 1)
        return (dx.reshape(n, c, h, w), dgrid)

    return Tensor._result(np.ascontiguousarray(out), (x, grid), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _softmax_rows(z):
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over a batch of single-label rows.

    logits: (N, K); labels: int array (N,).  Returns a scalar Tensor.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError("softmax_cross_entropy", logits.shape, labels.shape)
    n, k = logits.shape
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - m).sum(axis=1, keepdims=True)) + m
    picked = z[np.arange(n), labels]
    losses = lse[:, 0] - picked
    out = np.asarray(losses.mean(), dtype=z.dtype)

    def bwd(g):
        p = _softmax_rows(z)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return Tensor._result(out, (logits,), bwd)


def pixelwise_softmax_cross_entropy(logits, labels):
    """Mean per-pixel cross-entropy.

    logits: (N, K, H, W); labels: int array (N, H, W).
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.int64)
    if logits.ndim != 4 or labels.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeMismatchError("pixelwise_softmax_cross_entropy", logits.shape, labels.shape)
    n, k, h, w = logits.shape
    z = np.ascontiguousarray(logits.data.transpose(0, 2, 3, 1)).reshape(-1, k)
    lab = labels.reshape(-1)
    m = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - m).sum(axis=1, keepdims=True)) + m
    losses = lse[:, 0] - z[np.arange(z.shape[0]), lab]
    out = np.asarray(losses.mean(), dtype=z.dtype)

    def bwd(g):
        p = _softmax_rows(z)
        p[np.arange(z.shape[0]), lab] -= 1.0
        p *= g / z.shape[0]
        return (p.reshape(n, h, w, k).transpose(0, 3, 1, 2),)

    return Tensor._result(out, (logits,), bwd)


def softmax_probs(logits):
    """Row-softmax as plain numpy (no graph); for predictions and reporting."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return _softmax_rows(z)
