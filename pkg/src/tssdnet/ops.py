"""Differentiable primitives for 1D convolutional audio nets.

Every function takes and returns Tensors, computes the forward result
with numpy, and registers an exact vector-Jacobian closure on the tape.
Conventions fixed here:

* conv1d uses SAME padding at stride 1: total zero-padding is
  ``dilation*(k-1)``, split floor(total/2) left, remainder right.
* pooling drops the trailing ``L mod p`` samples and routes gradient to
  the first (lowest-index) maximum on ties.
* relu's gradient at exactly 0 is 0.

Convolutions and linear layers run one GEMM per example so that a
batched forward is bit-identical to stacking single-example forwards
(large-K BLAS reductions reorder across different row counts).
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, from_op

# Gradient checking needs forward passes sampled away from relu kinks
# and pooling ties; while a recorder list is installed, those ops append
# their distance to the nearest such decision boundary.
_kink_margins: list | None = None


@contextlib.contextmanager
def record_kink_margins(margins: list):
    global _kink_margins
    prev = _kink_margins
    _kink_margins = margins
    try:
        yield margins
    finally:
        _kink_margins = prev


def _note_pool_margin(windows: np.ndarray):
    if _kink_margins is None:
        return
    if windows.shape[-1] < 2:
        return
    top2 = np.sort(windows, axis=-1)[..., -2:]
    gaps = top2[..., 1] - top2[..., 0]
    live = top2[..., 1] > 0  # all-zero windows (fully rectified) are tie-benign
    if live.any():
        _kink_margins.append(float(gaps[live].min()))


def _conv_cols(xpad_b: np.ndarray, length: int, kernel: int, dilation: int) -> np.ndarray:
    """Gather windows of one padded example into a (L, Cin*k) matrix."""
    c, _ = xpad_b.shape
    sc, st = xpad_b.strides
    view = as_strided(xpad_b, shape=(length, c, kernel), strides=(st, sc, st * dilation))
    return view.reshape(length, c * kernel)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """SAME-padded 1D convolution, stride 1, with dilation.

    x: (B, Cin, L); weight: (Cout, Cin, k); bias: (Cout,). Output keeps
    the input time length.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be positive, got {dilation}")
    if x.data.ndim != 3:
        raise ValueError(f"conv1d expects (B, C, L) input, got shape {x.shape}")
    b, cin, length = x.data.shape
    cout, wcin, k = weight.data.shape
    if cin != wcin:
        raise ValueError(f"input has {cin} channels but weight expects {wcin}")
    if length < 1:
        raise ValueError("empty time axis")

    effective = dilation * (k - 1) + 1
    pad_left = (effective - 1) // 2
    pad_right = (effective - 1) - pad_left

    xpad = np.pad(x.data, ((0, 0), (0, 0), (pad_left, pad_right)))
    w2d = weight.data.reshape(cout, cin * k)
    out = np.empty((b, cout, length), dtype=x.data.dtype)
    for i in range(b):
        out[i] = (_conv_cols(xpad[i], length, k, dilation) @ w2d.T).T
    out += bias.data[None, :, None]

    def backward_fn(grad):
        gw2d = np.zeros_like(w2d)
        for i in range(b):
            gw2d += grad[i] @ _conv_cols(xpad[i], length, k, dilation)
        weight.accumulate_grad(gw2d.reshape(cout, cin, k))
        bias.accumulate_grad(grad.sum(axis=(0, 2)))

        gxpad = np.zeros_like(xpad)
        for j in range(k):
            # grad (B, Cout, L) x weight tap j (Cout, Cin) -> (B, Cin, L)
            contrib = np.einsum("bol,oc->bcl", grad, weight.data[:, :, j], optimize=True)
            gxpad[:, :, j * dilation : j * dilation + length] += contrib
        if pad_right:
            x.accumulate_grad(gxpad[:, :, pad_left:-pad_right])
        else:
            x.accumulate_grad(gxpad[:, :, pad_left:])

    return from_op(out, (x, weight, bias), backward_fn)


def maxpool1d(x: Tensor, p: int) -> Tensor:
    """Max pooling with stride == kernel size p; trailing remainder dropped."""
    if p < 1:
        raise ValueError(f"pool size must be positive, got {p}")
    b, c, length = x.data.shape
    if length < p:
        raise ValueError(f"time axis {length} shorter than pool size {p}")
    lout = length // p
    windows = x.data[:, :, : lout * p].reshape(b, c, lout, p)
    _note_pool_margin(windows)
    idx = windows.argmax(axis=3)
    out = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]

    def backward_fn(grad):
        gwin = np.zeros_like(windows)
        np.put_along_axis(gwin, idx[..., None], grad[..., None], axis=3)
        gx = np.zeros_like(x.data)
        gx[:, :, : lout * p] = gwin.reshape(b, c, lout * p)
        x.accumulate_grad(gx)

    return from_op(out, (x,), backward_fn)


def global_maxpool(x: Tensor) -> Tensor:
    """Per-channel maximum over the whole time axis: (B, C, L) -> (B, C)."""
    b, c, length = x.data.shape
    if length < 1:
        raise ValueError("empty time axis")
    _note_pool_margin(x.data)
    idx = x.data.argmax(axis=2)
    out = np.take_along_axis(x.data, idx[..., None], axis=2)[..., 0]

    def backward_fn(grad):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx[..., None], grad[..., None], axis=2)
        x.accumulate_grad(gx)

    return from_op(out, (x,), backward_fn)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray | None,
    running_var: np.ndarray | None,
    momentum: float = 0.1,
    eps: float = 1e-5,
    train: bool = True,
) -> Tensor:
    """Batch normalization over (B, L) per channel; input (B, C, L) or (B, C).

    Train mode normalizes with biased batch statistics and updates the
    running buffers in place: running <- (1-momentum)*running + momentum*batch.
    Eval mode normalizes with the running buffers.
    """
    if x.data.ndim == 3:
        axes = (0, 2)
        expand = (1, -1, 1)
    elif x.data.ndim == 2:
        axes = (0,)
        expand = (1, -1)
    else:
        raise ValueError(f"batchnorm1d expects 2D or 3D input, got shape {x.shape}")
    n = x.data.shape[0] * (x.data.shape[2] if x.data.ndim == 3 else 1)

    if train:
        if n < 2:
            raise ValueError("train-mode batchnorm needs at least 2 values per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var
    else:
        if running_mean is None or running_var is None:
            raise ValueError("eval-mode batchnorm requires initialized running statistics")
        mean = running_mean.astype(x.data.dtype, copy=False)
        var = running_var.astype(x.data.dtype, copy=False)

    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xhat = (x.data - mean.reshape(expand)) * inv_std.reshape(expand)
    out = gamma.data.reshape(expand) * xhat + beta.data.reshape(expand)

    def backward_fn(grad):
        gamma.accumulate_grad((grad * xhat).sum(axis=axes))
        beta.accumulate_grad(grad.sum(axis=axes))
        dxhat = grad * gamma.data.reshape(expand)
        if train:
            s1 = dxhat.sum(axis=axes).reshape(expand)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(expand)
            gx = (dxhat - s1 / n - xhat * (s2 / n)) * inv_std.reshape(expand)
        else:
            gx = dxhat * inv_std.reshape(expand)
        x.accumulate_grad(gx)

    return from_op(out, (x, gamma, beta), backward_fn)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def backward_fn(grad):
        x.accumulate_grad(grad * mask)

    return from_op(out, (x,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch in add: {a.shape} vs {b.shape}")

    def backward_fn(grad):
        a.accumulate_grad(grad)
        b.accumulate_grad(grad)

    return from_op(a.data + b.data, (a, b), backward_fn)


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate (B, Ci, L) tensors along the channel axis, in order."""
    if not parts:
        raise ValueError("concat_channels needs at least one input")
    b, _, length = parts[0].data.shape
    for t in parts[1:]:
        if t.data.shape[0] != b or t.data.shape[2] != length:
            raise ValueError("concat_channels requires matching batch and time axes")
    out = np.concatenate([t.data for t in parts], axis=1)
    sizes = [t.data.shape[1] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(grad):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            t.accumulate_grad(grad[:, lo:hi, :])

    return from_op(out, tuple(parts), backward_fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map (B, N) -> (B, M): out = x W^T + b."""
    b, n = x.data.shape
    m, wn = weight.data.shape
    if n != wn:
        raise ValueError(f"linear input has {n} features but weight expects {wn}")
    out = np.empty((b, m), dtype=x.data.dtype)
    for i in range(b):
        out[i] = weight.data @ x.data[i]
    out += bias.data[None, :]

    def backward_fn(grad):
        weight.accumulate_grad(grad.T @ x.data)
        bias.accumulate_grad(grad.sum(axis=0))
        x.accumulate_grad(grad @ weight.data)

    return from_op(out, (x, weight, bias), backward_fn)


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable row-wise log softmax of (B, K) logits."""
    if not np.isfinite(x.data).all():
        raise ValueError("log_softmax requires finite logits")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def backward_fn(grad):
        softmax = np.exp(out)
        x.accumulate_grad(grad - softmax * grad.sum(axis=1, keepdims=True))

    return from_op(out, (x,), backward_fn)
