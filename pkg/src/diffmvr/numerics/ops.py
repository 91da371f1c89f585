"""Structured differentiable operations: matmul, conv2d, softmax and friends.

Shapes follow the NCHW convention for images.  conv2d computes
cross-correlation (no kernel flip), which is what every learned-filter
network means by "convolution".
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported rank pairs: (2,2); (3,3) with equal leading batch; (3,2) where
    the 2-D operand is shared across the batch (the usual "apply one weight
    matrix to a batch of token blocks" case).
    """
    if a.data.dtype != b.data.dtype:
        raise DimensionError("matmul dtype mismatch")
    ra, rb = a.ndim, b.ndim
    if (ra, rb) not in ((2, 2), (3, 3), (3, 2)):
        raise DimensionError(f"matmul rank pair {(ra, rb)} unsupported")
    if ra == 3 and rb == 3 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"matmul batch mismatch {a.shape[0]} vs {b.shape[0]}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner-dim mismatch {a.shape} @ {b.shape}")

    data = a.data @ b.data

    def vjp(g):
        if rb == 2:
            gb_axes = tuple(range(g.ndim - 1))
            ga = g @ b.data.T
            gb = np.tensordot(a.data, g, axes=(gb_axes, gb_axes))
        else:
            ga = g @ b.data.swapaxes(-1, -2)
            gb = a.data.swapaxes(-1, -2) @ g
        return ga, gb

    return Tensor._result(data, (a, b), vjp, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-shift is constant)."""
    a = x
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._result(out, (a,), vjp, "softmax")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of zero tensors")
    dt = tensors[0].data.dtype
    if any(t.data.dtype != dt for t in tensors):
        raise DimensionError("concat dtype mismatch")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis))

    return Tensor._result(data, tuple(tensors), vjp, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis`` starting at ``start``."""
    if not (0 <= axis < x.ndim):
        raise DimensionError(f"narrow axis {axis} out of range for rank {x.ndim}")
    if start < 0 or length < 1 or start + length > x.shape[axis]:
        raise DimensionError(
            f"narrow window [{start}, {start + length}) exceeds extent {x.shape[axis]}"
        )
    a = x
    idx = tuple(
        slice(start, start + length) if d == axis else slice(None) for d in range(x.ndim)
    )
    data = np.ascontiguousarray(a.data[idx])

    def vjp(g):
        gx = np.zeros_like(a.data)
        gx[idx] = g
        return (gx,)

    return Tensor._result(data, (a,), vjp, "narrow")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of an NCHW tensor."""
    if x.ndim != 4:
        raise DimensionError(f"upsample2x expects NCHW, got rank {x.ndim}")
    a = x
    data = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)
    b, c, h, w = a.shape

    def vjp(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return Tensor._result(data, (a,), vjp, "upsample2x")


def _reflect_index(n: int, pad: int) -> np.ndarray:
    # Mirror without repeating the border pixel, so pad must leave a pivot.
    if pad >= n:
        raise DimensionError(f"reflect pad {pad} too large for extent {n}")
    return np.concatenate(
        [np.arange(pad, 0, -1), np.arange(n), np.arange(n - 2, n - 2 - pad, -1)]
    )


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
    pad_mode: str = "reflect",
) -> Tensor:
    """2-D cross-correlation with square odd kernels.

    ``x`` is (C,H,W) or (B,C,H,W); the result keeps the input's rank.
    ``weight`` is (C_out, C_in, k, k).  Padding is symmetric; mode is
    "reflect" (default) or "zero".  Output extents must be positive.
    """
    if x.data.dtype != weight.data.dtype:
        raise DimensionError("conv2d dtype mismatch")
    squeeze = x.ndim == 3
    xt = x.reshape((1,) + x.shape) if squeeze else x
    if xt.ndim != 4 or weight.ndim != 4:
        raise DimensionError(
            f"conv2d expects image rank 3/4 and kernel rank 4, got {x.ndim}/{weight.ndim}"
        )
    bsz, cin, h, w = xt.shape
    cout, wcin, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d kernel must be square with odd extent, got {kh}x{kw}")
    if wcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input {cin}, kernel {wcin}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv2d invalid stride={stride} pad={pad}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({cout},)")
    if pad_mode not in ("reflect", "zero"):
        raise DimensionError(f"unknown pad_mode {pad_mode!r}")

    k, s, p = kh, stride, pad
    ho = (h + 2 * p - k) // s + 1
    wo = (w + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise DimensionError(
            f"conv2d output would be empty: input {h}x{w}, kernel {k}, stride {s}, pad {p}"
        )

    a, wgt = xt, weight
    if p > 0:
        if pad_mode == "reflect":
            ri = _reflect_index(h, p)
            ci = _reflect_index(w, p)
            xp = a.data[:, :, ri][:, :, :, ci]
        else:
            xp = np.zeros((bsz, cin, h + 2 * p, w + 2 * p), dtype=a.data.dtype)
            xp[:, :, p : p + h, p : p + w] = a.data
    else:
        xp = a.data

    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::s, ::s]  # (B, Cin, Ho, Wo, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        bsz * ho * wo, cin * k * k
    )
    wmat = wgt.data.reshape(cout, cin * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    data = np.ascontiguousarray(out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2))

    parents = (a, wgt) if bias is None else (a, wgt, bias)

    def vjp(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(wgt.shape)
        gcols = (gmat @ wmat).reshape(bsz, ho, wo, cin, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros((bsz, cin, h + 2 * p, w + 2 * p), dtype=g.dtype)
        for ki in range(k):
            for kj in range(k):
                gxp[:, :, ki : ki + s * ho : s, kj : kj + s * wo : s] += gcols[
                    :, :, :, :, ki, kj
                ]
        if p == 0:
            gx = gxp
        elif pad_mode == "zero":
            gx = gxp[:, :, p : p + h, p : p + w]
        else:
            # Fold the reflected borders back onto their source pixels.
            acc_r = np.zeros((h, bsz, cin, w + 2 * p), dtype=g.dtype)
            np.add.at(acc_r, ri, gxp.transpose(2, 0, 1, 3))
            acc_c = np.zeros((w, h, bsz, cin), dtype=g.dtype)
            np.add.at(acc_c, ci, acc_r.transpose(3, 0, 1, 2))
            gx = acc_c.transpose(2, 3, 1, 0)
        if bias is None:
            return gx, gw
        return gx, gw, gmat.sum(axis=0)

    res = Tensor._result(data, parents, vjp, "conv2d")
    return res.reshape(res.shape[1:]) if squeeze else res
