"""Differentiable NN layers on top of the autodiff primitives.

Every op here is expressible as a composition of linear gather/scatter
primitives plus elementwise math, so second derivatives come for free.
Shape conventions: images are NCHW, conv weights are OIKK, dense weights
are (in, out).
"""

from __future__ import annotations

import numpy as np

try:  # single-pass gather kernels; numpy slicing fallback below
    from numba import njit

    @njit(cache=True)
    def _unfold_kernel(x, k, stride, cols):
        n, c, _, _ = x.shape
        _, _, oh, ow = cols.shape[0], cols.shape[1], cols.shape[4], cols.shape[5]
        for ni in range(n):
            for ci in range(c):
                for i in range(k):
                    for j in range(k):
                        for y in range(oh):
                            for xx in range(ow):
                                cols[ni, ci, i, j, y, xx] = x[
                                    ni, ci, y * stride + i, xx * stride + j
                                ]

    @njit(cache=True)
    def _fold_kernel(g6, k, stride, out):
        n, c, h, w = out.shape
        oh, ow = g6.shape[4], g6.shape[5]
        for ni in range(n):
            for ci in range(c):
                for i in range(k):
                    for j in range(k):
                        for y in range(oh):
                            for xx in range(ow):
                                out[ni, ci, y * stride + i, xx * stride + j] += g6[
                                    ni, ci, i, j, y, xx
                                ]

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a soft dependency
    _HAVE_NUMBA = False

from .autodiff import (
    ShapeError,
    Tensor,
    _node,
    add,
    broadcast_to,
    concat,
    leaky_relu,
    matmul,
    mul,
    mul_const,
    reshape,
    sqrt,
    square,
    sub,
    tmean,
    tsum,
)

__all__ = [
    "conv2d",
    "dense",
    "pad2d",
    "unfold",
    "fold",
    "upsample_nearest2x",
    "avgpool2x",
    "pixelwise_feature_norm",
    "minibatch_stddev_feature",
    "leaky_relu",
]


def pad2d(a: Tensor, padding: int) -> Tensor:
    """Zero-pad the two trailing spatial axes of an NCHW tensor."""
    if padding < 0:
        raise ShapeError("padding must be >= 0")
    if padding == 0:
        return a
    p = padding

    def vjp(g):
        index = (slice(None), slice(None), slice(p, -p), slice(p, -p))
        return _node(g.data[index], "crop2d", (g,), (lambda gg: pad2d(gg, p),))

    return _node(
        np.pad(a.data, ((0, 0), (0, 0), (p, p), (p, p))), "pad2d", (a,), (vjp,)
    )


def _out_hw(h: int, w: int, k: int, stride: int):
    return (h - k) // stride + 1, (w - k) // stride + 1


def unfold(a: Tensor, kernel: int, stride: int = 1) -> Tensor:
    """Extract sliding k*k patches: NCHW -> (N, C*k*k, out_h*out_w)."""
    n, c, h, w = a.shape
    oh, ow = _out_hw(h, w, kernel, stride)
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel {kernel} does not fit input {h}x{w}")
    d = a.data
    cols = np.empty((n, c, kernel, kernel, oh, ow), dtype=d.dtype)
    if _HAVE_NUMBA:
        _unfold_kernel(d, kernel, stride, cols)
    else:
        for i in range(kernel):
            for j in range(kernel):
                cols[:, :, i, j] = d[
                    :, :, i : i + stride * oh : stride, j : j + stride * ow : stride
                ]
    out = cols.reshape(n, c * kernel * kernel, oh * ow)
    in_shape = a.shape
    return _node(
        out, "unfold", (a,), (lambda g: fold(g, in_shape, kernel, stride),)
    )


def fold(cols: Tensor, out_shape, kernel: int, stride: int = 1) -> Tensor:
    """Scatter-add patches back onto an NCHW canvas (adjoint of unfold)."""
    n, c, h, w = out_shape
    oh, ow = _out_hw(h, w, kernel, stride)
    g6 = cols.data.reshape(n, c, kernel, kernel, oh, ow)
    out = np.zeros((n, c, h, w), dtype=cols.data.dtype)
    if _HAVE_NUMBA:
        _fold_kernel(g6, kernel, stride, out)
    else:
        for i in range(kernel):
            for j in range(kernel):
                out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g6[
                    :, :, i, j
                ]
    return _node(
        out, "fold", (cols,), (lambda g: unfold(g, kernel, stride),)
    )


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; differentiable in input, weight and bias."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be OIKK, got shape {weight.shape}")
    o, i, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"only square kernels supported, got {kh}x{kw}")
    if x.shape[1] != i:
        raise ShapeError(
            f"input has {x.shape[1]} channels, weight expects {i}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"bias must have shape ({o},), got {bias.shape}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    n, _, h, w = x.shape
    if h + 2 * padding < kh or w + 2 * padding < kh:
        raise ShapeError(
            f"kernel {kh} does not fit padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    oh, ow = _out_hw(h + 2 * padding, w + 2 * padding, kh, stride)

    if kh == 1 and stride == 1 and padding == 0:
        # pointwise conv: plain channel mixing, no patch extraction needed
        cols = reshape(x, (n, i, h * w))
    else:
        cols = unfold(pad2d(x, padding), kh, stride)  # (N, I*K*K, L)
    w2 = reshape(weight, (o, i * kh * kw))
    out = reshape(matmul(w2, cols), (n, o, oh, ow))
    if bias is not None:
        out = add(out, reshape(bias, (1, o, 1, 1)))
    return out


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine layer: (N, in) @ (in, out) + (out,)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"dense expects 2-D operands, got {x.shape} @ {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"dense input width {x.shape[1]} does not match weight rows {weight.shape[0]}"
        )
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, reshape(bias, (1, weight.shape[1])))
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Double H and W by pixel replication."""
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    d = x.data
    up = np.repeat(np.repeat(d, 2, axis=2), 2, axis=3)
    return _node(up, "upsample_nearest2x", (x,), (lambda g: _pool_sum2x(g),))


def _pool_sum2x(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"2x pooling needs even spatial size, got {h}x{w}")
    d = x.data.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))
    return _node(d, "pool_sum2x", (x,), (lambda g: upsample_nearest2x(g),))


def avgpool2x(x: Tensor) -> Tensor:
    """Halve H and W by 2x2 mean pooling."""
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    return mul_const(_pool_sum2x(x), 0.25)


def pixelwise_feature_norm(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each pixel's channel vector to roughly unit RMS."""
    ms = tmean(square(x), axis=1, keepdims=True)
    return x / sqrt(ms + eps)


def minibatch_stddev_feature(x: Tensor) -> Tensor:
    """Append one channel holding the batch-mean of per-feature stddevs."""
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got shape {x.shape}")
    n = x.shape[0]
    mu = tmean(x, axis=0, keepdims=True)
    var = tmean(square(sub(x, mu)), axis=0, keepdims=True)
    scalar = tmean(sqrt(var))
    feat = broadcast_to(reshape(scalar, (1, 1, 1, 1)), (n, 1, x.shape[2], x.shape[3]))
    return concat([x, feat], axis=1)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
