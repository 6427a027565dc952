"""Vectorized numpy fallback for the gather/scatter kernels.

Same contracts as the compiled extension in ``_corekernels.pyx``; used when
the extension is unavailable or when ``ADVFORGE_BACKEND=numpy`` is set.
im2col/col2im iterate over kernel offsets with whole-batch slice copies,
which keeps everything inside numpy's C loops.
"""

from __future__ import annotations

import numpy as np


def conv_out_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> (N, C*kh*kw, OH*OW) patch matrix, row order (c, ki, kj)."""
    n, c, h, w = x.shape
    oh, ow = conv_out_hw(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c * kh * kw, oh * ow), dtype=x.dtype)
    row = 0
    for ci in range(c):
        for ki in range(kh):
            for kj in range(kw):
                patch = x[:, ci, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride]
                cols[:, row, :] = patch.reshape(n, oh * ow)
                row += 1
    return cols


def col2im(
    dcols: np.ndarray, x_shape: tuple[int, ...], kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch gradients back onto the image."""
    n, c, h, w = x_shape
    oh, ow = conv_out_hw(h, w, kh, kw, stride, pad)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    row = 0
    for ci in range(c):
        for ki in range(kh):
            for kj in range(kw):
                dx[:, ci, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                    dcols[:, row, :].reshape(n, oh, ow)
                )
                row += 1
    if pad:
        dx = dx[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(dx)


def maxpool2d_forward(x: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping k-by-k max pooling; returns (pooled, in-window argmax).

    Ties resolve to the lowest flat window index (numpy argmax order).
    """
    n, c, h, w = x.shape
    oh, ow = h // k, w // k
    win = x.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
    idx = win.argmax(axis=-1).astype(np.int32)
    y = np.take_along_axis(win, idx[..., None].astype(np.int64), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2d_backward(
    g: np.ndarray, idx: np.ndarray, k: int, x_shape: tuple[int, ...]
) -> np.ndarray:
    n, c, h, w = x_shape
    oh, ow = h // k, w // k
    dwin = np.zeros((n, c, oh, ow, k * k), dtype=g.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.int64), g[..., None], axis=-1)
    dx = dwin.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return np.ascontiguousarray(dx)
