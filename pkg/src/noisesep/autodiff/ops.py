"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects and records a
backward closure when an input requires grad.  Broadcasting is limited to
scalars and trailing-suffix operands (bias style); anything else needs an
explicit reshape.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NonFiniteError, ShapeError, Tensor, as_tensor, make_node
from .. import _kernels

__all__ = [
    "add", "sub", "mul", "scale", "sum_", "mean", "exp", "log", "sqrt",
    "matmul", "affine", "relu", "prelu", "sigmoid", "tanh", "softmax", "logsumexp",
    "layer_norm", "l2_normalize", "concat", "stack", "slice_", "take",
    "reshape", "transpose", "clamp_min", "conv1d", "conv1d_transpose",
    "chunk_frames", "overlap_add_frames", "gru_scan",
    "conv1d_out_len", "conv1d_transpose_out_len", "chunk_geometry",
]


def _check_suffix(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or b.ndim == 0 or a.ndim == 0:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    if a.ndim <= b.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return
    raise ShapeError(op, f"cannot combine shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape) if g.shape != shape else g


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("add", a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("sub", a.data, b.data)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("mul", a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_node(ad * bd, (a, b), bw, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return make_node(x.data * c, (x,), lambda g: (g * c,), "scale")


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_node(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise NonFiniteError("log: input must be positive")
    return make_node(np.log(xd), (x,), lambda g: (g / xd,), "log")


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise NonFiniteError("sqrt: input must be non-negative")
    y = np.sqrt(x.data)
    return make_node(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient is zero where the floor binds."""
    keep = x.data > floor
    return make_node(np.where(keep, x.data, floor), (x,), lambda g: (g * keep,), "clamp_min")


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return make_node(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,), "relu")


def prelu(x: Tensor, a: Tensor) -> Tensor:
    """Parametric ReLU with one slope shared across all channels (``a.shape == (1,)``)."""
    if a.size != 1:
        raise ShapeError("prelu", f"slope must have one element, got {a.shape}")
    xd = x.data
    pos = xd > 0
    slope = float(a.data.reshape(()))
    ashape = a.shape

    def bw(g):
        gx = np.where(pos, g, g * slope)
        ga = np.sum(np.where(pos, 0.0, g * xd)).reshape(ashape)
        return gx, ga

    return make_node(np.where(pos, xd, slope * xd), (x, a), bw, "prelu")


def sigmoid(x: Tensor) -> Tensor:
    y = _kernels.sigmoid(x.data)
    return make_node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return make_node(y, (x,), bw, "softmax")


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """log(sum(exp(x))) along ``axis`` with the usual max shift; axis is reduced."""
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=axis)
    w = e / s

    def bw(g):
        return (np.expand_dims(g, axis) * w,)

    return make_node(out, (x,), bw, "logsumexp")


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", f"shapes {a.shape} @ {b.shape}")
    if a.ndim != b.ndim and b.ndim != 2:
        raise ShapeError("matmul", f"batch ranks differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        if gb.ndim > bd.ndim:
            gb = gb.reshape(-1, *bd.shape).sum(axis=0)
        return ga, gb

    return make_node(ad @ bd, (a, b), bw, "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` over the last axis of ``x``; ``w`` is (out, in)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError("affine", f"input {x.shape} vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError("affine", f"bias {b.shape} vs weight {w.shape}")
    xd, wd = x.data, w.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd.T
    if b is not None:
        out += b.data
    out = out.reshape(*xd.shape[:-1], wd.shape[0])

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd).reshape(xd.shape)
        gw = g2.T @ x2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw, "affine")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize over the last axis, then apply per-feature gain and bias."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError("layer_norm", f"features {d} vs gain {gain.shape} bias {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        ggain = np.sum(g * xhat, axis=lead)
        gbias = np.sum(g, axis=lead)
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * np.mean(gh * xhat, axis=-1, keepdims=True))
        return gx, ggain, gbias

    return make_node(out, (x, gain, bias), bw, "layer_norm")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale vectors along ``axis`` to unit length: x / sqrt(|x|^2 + eps)."""
    if eps <= 0:
        raise ValueError("l2_normalize: eps must be positive")
    xd = x.data
    norm = np.sqrt(np.sum(xd * xd, axis=axis, keepdims=True) + eps)
    y = xd / norm

    def bw(g):
        return ((g - y * np.sum(g * y, axis=axis, keepdims=True)) / norm,)

    return make_node(y, (x,), bw, "l2_normalize")


# -- structural --------------------------------------------------------------

def concat(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from None
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tuple(xs), bw, "concat")


def stack(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    try:
        out = np.stack([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError("stack", str(exc)) from None

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(out, tuple(xs), bw, "stack")


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return make_node(np.array(x.data[index]), (x,), bw, "slice")


def take(x: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    n = x.shape[axis]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError("take", f"index out of range for axis {axis} of extent {n}")
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        gm = np.moveaxis(g, axis, 0)
        fm = np.moveaxis(full, axis, 0)
        np.add.at(fm, idx, gm)
        return (full,)

    return make_node(np.take(x.data, idx, axis=axis), (x,), bw, "take")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {old} to {tuple(shape)}") from None
    return make_node(out, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError("transpose", f"axes {axes} invalid for rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(x.data, axes), (x,),
                     lambda g: (np.transpose(g, inv),), "transpose")


# -- convolution -------------------------------------------------------------

def conv1d_out_len(T: int, kernel: int, stride: int) -> int:
    return (T - kernel) // stride + 1


def conv1d_transpose_out_len(L: int, kernel: int, stride: int) -> int:
    return (L - 1) * stride + kernel


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid 1-D convolution (cross-correlation).

    x: (C_in, T) or (B, C_in, T); w: (C_out, C_in, k); b: (C_out,).
    Output: (..., C_out, L) with L = floor((T - k) / stride) + 1.
    """
    if stride < 1:
        raise ShapeError("conv1d", f"stride must be >= 1, got {stride}")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or w.ndim != 3:
        raise ShapeError("conv1d", f"input {x.shape}, weight {w.shape}")
    B, cin, T = xd.shape
    cout, wcin, k = w.shape
    if wcin != cin:
        raise ShapeError("conv1d", f"input channels {cin} != weight channels {wcin}")
    if T < k:
        raise ShapeError("conv1d", f"signal length {T} shorter than kernel {k}")
    if b is not None and b.shape != (cout,):
        raise ShapeError("conv1d", f"bias {b.shape} vs {cout} output channels")
    L = conv1d_out_len(T, k, stride)
    frames = sliding_window_view(xd, k, axis=2)[:, :, ::stride][:, :, :L]  # (B, cin, L, k)
    wd = w.data
    out = np.einsum("bclk,ock->bol", frames, wd, optimize=True)
    if b is not None:
        out += b.data[:, None]

    def bw(g):
        g3 = g if batched else g[None]
        gw = np.einsum("bol,bclk->ock", g3, frames, optimize=True)
        contrib = np.einsum("bol,ock->bclk", g3, wd, optimize=True)
        gx = np.zeros_like(xd)
        span = stride * (L - 1) + 1
        for j in range(k):
            gx[:, :, j:j + span:stride] += contrib[:, :, :, j]
        gx = gx if batched else gx[0]
        if b is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out if batched else out[0], parents, bw, "conv1d")


def conv1d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed 1-D convolution, the adjoint of :func:`conv1d`'s input map.

    x: (C_in, L) or (B, C_in, L); w: (C_in, C_out, k); b: (C_out,).
    Output: (..., C_out, (L - 1) * stride + k).
    """
    if stride < 1:
        raise ShapeError("conv1d_transpose", f"stride must be >= 1, got {stride}")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or w.ndim != 3:
        raise ShapeError("conv1d_transpose", f"input {x.shape}, weight {w.shape}")
    B, cin, L = xd.shape
    wcin, cout, k = w.shape
    if wcin != cin:
        raise ShapeError("conv1d_transpose", f"input channels {cin} != weight channels {wcin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError("conv1d_transpose", f"bias {b.shape} vs {cout} output channels")
    T = conv1d_transpose_out_len(L, k, stride)
    wd = w.data
    contrib = np.einsum("bcl,cok->bolk", xd, wd, optimize=True)
    out = np.zeros((B, cout, T))
    span = stride * (L - 1) + 1
    for j in range(k):
        out[:, :, j:j + span:stride] += contrib[:, :, :, j]
    if b is not None:
        out += b.data[:, None]

    def bw(g):
        g3 = g if batched else g[None]
        gf = sliding_window_view(g3, k, axis=2)[:, :, ::stride][:, :, :L]  # (B, cout, L, k)
        gx = np.einsum("bolk,cok->bcl", gf, wd, optimize=True)
        gw = np.einsum("bcl,bolk->cok", xd, gf, optimize=True)
        gx = gx if batched else gx[0]
        if b is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out if batched else out[0], parents, bw, "conv1d_transpose")


# -- chunking ----------------------------------------------------------------

def chunk_geometry(L: int, K: int) -> tuple[int, int, int]:
    """Return (hop, S, pad) for 50%-overlapped chunks of size K covering L frames."""
    if K < 2 or K % 2:
        raise ShapeError("chunk", f"chunk size must be even and >= 2, got {K}")
    if L < 1:
        raise ShapeError("chunk", f"need at least one frame, got {L}")
    hop = K // 2
    L_pad = max(L, K)
    L_pad = K + -(-(L_pad - K) // hop) * hop
    S = (L_pad - K) // hop + 1
    return hop, S, L_pad - L


def chunk_frames(x: Tensor, K: int) -> Tensor:
    """Split time-major (L, H) into 50%-overlapped chunks (S, K, H), zero-padding the tail."""
    if x.ndim != 2:
        raise ShapeError("chunk", f"expected (L, H), got {x.shape}")
    L, H = x.shape
    hop, S, pad = chunk_geometry(L, K)
    halves = np.concatenate([x.data, np.zeros((pad, H))]).reshape(S + 1, hop, H)
    out = np.concatenate([halves[:-1], halves[1:]], axis=1)

    def bw(g):
        gh = np.zeros((S + 1, hop, H))
        gh[:-1] += g[:, :hop]
        gh[1:] += g[:, hop:]
        return (gh.reshape(-1, H)[:L],)

    return make_node(out, (x,), bw, "chunk")


def _overlap_counts(S: int, hop: int) -> np.ndarray:
    counts = np.full(S + 1, 2.0)
    counts[0] = counts[-1] = 1.0
    return counts[:, None, None]


def overlap_add_frames(c: Tensor, L: int) -> Tensor:
    """Inverse of :func:`chunk_frames`: sum overlapping halves, divide by overlap count, trim."""
    if c.ndim != 3:
        raise ShapeError("overlap_add", f"expected (S, K, H), got {c.shape}")
    S, K, H = c.shape
    hop, S_exp, _ = chunk_geometry(L, K)
    if S != S_exp:
        raise ShapeError("overlap_add", f"{S} chunks cannot cover {L} frames with K={K}")
    counts = _overlap_counts(S, hop)
    acc = np.zeros((S + 1, hop, H))
    acc[:-1] += c.data[:, :hop]
    acc[1:] += c.data[:, hop:]
    out = (acc / counts).reshape(-1, H)[:L]

    def bw(g):
        gp = np.zeros(((S + 1) * hop, H))
        gp[:L] = g
        gp = gp.reshape(S + 1, hop, H) / counts
        return (np.concatenate([gp[:-1], gp[1:]], axis=1),)

    return make_node(out, (c,), bw, "overlap_add")


# -- recurrence --------------------------------------------------------------

def gru_scan(xproj: Tensor, w_hh: Tensor, b_hh: Tensor, reverse: bool = False) -> Tensor:
    """Run a GRU recurrence over pre-projected inputs.

    xproj: (B, T, 3H) holding the input contributions [reset | update | new];
    w_hh: (3H, H); b_hh: (3H,).  Returns hidden states (B, T, H), h0 = 0.
    Uses the compiled kernel when available.
    """
    if xproj.ndim != 3 or w_hh.ndim != 2:
        raise ShapeError("gru_scan", f"xproj {xproj.shape}, w_hh {w_hh.shape}")
    H = w_hh.shape[1]
    if xproj.shape[2] != 3 * H or w_hh.shape[0] != 3 * H or b_hh.shape != (3 * H,):
        raise ShapeError("gru_scan", f"xproj {xproj.shape}, w_hh {w_hh.shape}, b_hh {b_hh.shape}")
    xd = np.ascontiguousarray(xproj.data)
    wd = np.ascontiguousarray(w_hh.data)
    bd = np.ascontiguousarray(b_hh.data)
    hs, cache = _kernels.gru_forward(xd, wd, bd, reverse)

    def bw(g):
        return _kernels.gru_backward(np.ascontiguousarray(g), wd, hs, cache, reverse)

    return make_node(hs, (xproj, w_hh, b_hh), bw, "gru_scan")
