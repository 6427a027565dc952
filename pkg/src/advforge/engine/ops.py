"""Differentiable operator catalog.

Each op validates shapes, computes the float32 forward value, and (when an
input requires grad and a tape is active) records a backward rule.  Whether
an input receives gradient is decided at record time, so flipping
``requires_grad`` afterwards does not rewrite history — ``frozen`` blocks
rely on this.

Numerics: float32 storage and BLAS gemms; reductions (sum/mean, bias and
cross-entropy accumulation) run in float64 before rounding back.
Subgradient choices: relu'(0) = 0, clamp' = 0 at and outside the bounds,
sign' = 0 everywhere.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import DTYPE, ShapeMismatch, Tensor, active_tape


def _result(out_data: np.ndarray) -> Tensor:
    arr = np.asarray(out_data, dtype=DTYPE)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return Tensor.__new__(Tensor)._init_shared(arr)


def _tape_if_needed(*tensors: Tensor):
    t = active_tape()
    if t is not None and any(x.requires_grad for x in tensors):
        return t
    return None


def _binary_elementwise(a: Tensor, b: Tensor, name: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{name}: operand shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_elementwise(a, b, "add")
    out = _result(a.data + b.data)
    tape = _tape_if_needed(a, b)
    if tape is not None:
        out.requires_grad = True
        na, nb = a.requires_grad, b.requires_grad

        def backward(g: np.ndarray) -> None:
            if na:
                a.accumulate_grad(g)
            if nb:
                b.accumulate_grad(g)

        tape.record(out, backward)
    return out


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _binary_elementwise(a, b, "subtract")
    out = _result(a.data - b.data)
    tape = _tape_if_needed(a, b)
    if tape is not None:
        out.requires_grad = True
        na, nb = a.requires_grad, b.requires_grad

        def backward(g: np.ndarray) -> None:
            if na:
                a.accumulate_grad(g)
            if nb:
                b.accumulate_grad(-g, owned=True)

        tape.record(out, backward)
    return out


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _binary_elementwise(a, b, "multiply")
    out = _result(a.data * b.data)
    tape = _tape_if_needed(a, b)
    if tape is not None:
        out.requires_grad = True
        na, nb = a.requires_grad, b.requires_grad
        ad, bd = a.data, b.data

        def backward(g: np.ndarray) -> None:
            if na:
                a.accumulate_grad(g * bd, owned=True)
            if nb:
                b.accumulate_grad(g * ad, owned=True)

        tape.record(out, backward)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    s32 = DTYPE(s)
    out = _result(a.data * s32)
    tape = _tape_if_needed(a)
    if tape is not None:
        out.requires_grad = True

        def backward(g: np.ndarray) -> None:
            a.accumulate_grad(g * s32, owned=True)

        tape.record(out, backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = _result(a.data @ b.data)
    tape = _tape_if_needed(a, b)
    if tape is not None:
        out.requires_grad = True
        na, nb = a.requires_grad, b.requires_grad
        ad, bd = a.data, b.data

        def backward(g: np.ndarray) -> None:
            if na:
                a.accumulate_grad(g @ bd.T, owned=True)
            if nb:
                b.accumulate_grad(ad.T @ g, owned=True)

        tape.record(out, backward)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: (N, D) + (D,)."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"add_bias: shapes {x.shape} and {b.shape} do not conform")
    out = _result(x.data + b.data)
    tape = _tape_if_needed(x, b)
    if tape is not None:
        out.requires_grad = True
        nx, nb = x.requires_grad, b.requires_grad

        def backward(g: np.ndarray) -> None:
            if nx:
                x.accumulate_grad(g)
            if nb:
                b.accumulate_grad(g.sum(axis=0, dtype=np.float64).astype(DTYPE), owned=True)

        tape.record(out, backward)
    return out


def conv2d(
    x: Tensor,
    w: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2D cross-correlation, NCHW layout, symmetric zero padding."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: input {x.shape} and kernel {w.shape} do not conform")
    n, cin, h, width = x.shape
    cout, _, kh, kw = w.shape
    if kh > h + 2 * padding or kw > width + 2 * padding:
        raise ShapeMismatch(
            f"conv2d: kernel {w.shape} larger than padded input {x.shape} (padding={padding})"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch(f"conv2d: bias {bias.shape} does not match {cout} output channels")
    oh, ow = kernels.conv_out_hw(h, width, kh, kw, stride, padding)
    cols = kernels.im2col(x.data, kh, kw, stride, padding)  # (N, K, OH*OW)
    w2 = w.data.reshape(cout, cin * kh * kw)
    y = np.matmul(w2[None, :, :], cols).reshape(n, cout, oh, ow)
    if bias is not None:
        y += bias.data[None, :, None, None]
    out = _result(y)
    tape = _tape_if_needed(x, w) if bias is None else _tape_if_needed(x, w, bias)
    if tape is not None:
        out.requires_grad = True
        nx, nw = x.requires_grad, w.requires_grad
        nb = bias is not None and bias.requires_grad
        saved_cols = cols if nw else None
        x_shape, w_shape = x.shape, w.shape

        def backward(g: np.ndarray) -> None:
            g2 = g.reshape(n, cout, oh * ow)
            if nw:
                dw2 = np.matmul(g2, saved_cols.transpose(0, 2, 1)).sum(axis=0, dtype=np.float64)
                w.accumulate_grad(dw2.astype(DTYPE).reshape(w_shape), owned=True)
            if nb:
                bias.accumulate_grad(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(DTYPE), owned=True)
            if nx:
                dcols = np.matmul(w2.T[None, :, :], g2)
                x.accumulate_grad(kernels.col2im(dcols, x_shape, kh, kw, stride, padding), owned=True)

        tape.record(out, backward)
    return out


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping size-by-size max pooling (stride = size)."""
    if x.ndim != 4:
        raise ShapeMismatch(f"maxpool2d: expected NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeMismatch(f"maxpool2d: window {size} does not tile input {x.shape}")
    y, idx = kernels.maxpool2d_forward(x.data, size)
    out = _result(y)
    tape = _tape_if_needed(x)
    if tape is not None:
        out.requires_grad = True
        x_shape = x.shape

        def backward(g: np.ndarray) -> None:
            x.accumulate_grad(kernels.maxpool2d_backward(g, idx, size, x_shape), owned=True)

        tape.record(out, backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = _result(np.maximum(x.data, DTYPE(0)))
    tape = _tape_if_needed(x)
    if tape is not None:
        out.requires_grad = True
        mask = x.data > 0

        def backward(g: np.ndarray) -> None:
            x.accumulate_grad(np.where(mask, g, DTYPE(0)), owned=True)

        tape.record(out, backward)
    return out


def flatten(x: Tensor) -> Tensor:
    """Collapse all trailing axes: (N, ...) -> (N, prod(...))."""
    n = x.shape[0]
    out = _result(x.data.reshape(n, -1))
    tape = _tape_if_needed(x)
    if tape is not None:
        out.requires_grad = True
        x_shape = x.shape

        def backward(g: np.ndarray) -> None:
            x.accumulate_grad(g.reshape(x_shape))

        tape.record(out, backward)
    return out


def _full_reduce(x: Tensor, divisor: float) -> Tensor:
    total = np.sum(x.data, dtype=np.float64) / divisor
    out = _result(np.asarray(total))
    tape = _tape_if_needed(x)
    if tape is not None:
        out.requires_grad = True
        x_shape, x_size = x.shape, x.size

        def backward(g: np.ndarray) -> None:
            x.accumulate_grad(np.full(x_shape, float(g) / divisor, dtype=DTYPE), owned=True)

        tape.record(out, backward)
    return out


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements (scalar), 64-bit accumulation."""
    return _full_reduce(x, 1.0)


def mean(x: Tensor) -> Tensor:
    """Mean of all elements (scalar), 64-bit accumulation."""
    return _full_reduce(x, float(x.size))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    out = _result(np.clip(x.data, DTYPE(lo), DTYPE(hi)))
    tape = _tape_if_needed(x)
    if tape is not None:
        out.requires_grad = True
        interior = (x.data > lo) & (x.data < hi)

        def backward(g: np.ndarray) -> None:
            x.accumulate_grad(np.where(interior, g, DTYPE(0)), owned=True)

        tape.record(out, backward)
    return out


def sign(x: Tensor) -> Tensor:
    """Elementwise sign with sign(0) = 0; propagates zero gradient."""
    out = _result(np.sign(x.data))
    tape = _tape_if_needed(x)
    if tape is not None:
        out.requires_grad = True

        def backward(g: np.ndarray) -> None:
            x.accumulate_grad(np.zeros_like(g), owned=True)

        tape.record(out, backward)
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label], log-sum-exp form."""
    if logits.ndim != 2:
        raise ShapeMismatch(f"softmax_cross_entropy: expected (batch, classes), got {logits.shape}")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(
            f"softmax_cross_entropy: labels shape {labels.shape} does not match batch {n}"
        )
    bad = np.nonzero((labels < 0) | (labels >= c))[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"softmax_cross_entropy: label {int(labels[i])} at batch index {i} outside [0, {c})"
        )
    z = logits.data.astype(np.float64)
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    lse = (zmax + np.log(sez))[:, 0]
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    out = _result(np.asarray(loss))
    tape = _tape_if_needed(logits)
    if tape is not None:
        out.requires_grad = True
        probs = ez / sez

        def backward(g: np.ndarray) -> None:
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            logits.accumulate_grad((d * (float(g) / n)).astype(DTYPE), owned=True)

        tape.record(out, backward)
    return out
