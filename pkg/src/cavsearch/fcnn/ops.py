"""Array operations with hand-derived backward passes (reference path).

Conventions: activations are float32 arrays shaped (N, C, H, W);
convolution weights are (out_channels, in_channels, k, k) with odd k,
biases (out_channels,).  Convolutions are cross-correlations with zero
padding and stride 1.  Every ``*_backward`` takes the same inputs the
forward pass saw plus the upstream gradient and returns gradients of
identical shapes.

The convolution here is evaluated via an explicit im2col patch matrix
and one matrix product; the input gradient is again a convolution — of
the padded upstream gradient with the spatially flipped kernel, in/out
channels swapped.  :mod:`.kernels` implements the same contracts as
direct loops for speed; the test suite holds the two routes equal to
float rounding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import ShapeError


def _check_conv_args(x, w, padding):
    if x.ndim != 4:
        raise ShapeError(f"input must be 4-d (N, C, H, W), got {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"weights must be (O, C, k, k), got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[1]}, weights expect "
            f"{w.shape[1]}")
    if padding < 0 or padding > w.shape[2] - 1:
        raise ShapeError("padding must be in [0, k-1]")
    if x.shape[2] + 2 * padding < w.shape[2] or \
            x.shape[3] + 2 * padding < w.shape[3]:
        raise ShapeError("kernel larger than padded input")


def conv_out_shape(x_shape, w_shape, padding):
    n, _, h, wd = x_shape
    o, _, k, _ = w_shape
    return (n, o, h + 2 * padding - k + 1, wd + 2 * padding - k + 1)


def im2col(x: np.ndarray, k: int, padding: int) -> np.ndarray:
    """Patch matrix (C*k*k, N*H_out*W_out); column (c, ky, kx) order."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding),
                       (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # N,C,Ho,Wo,k,k
    n, c, ho, wo = win.shape[:4]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, -1)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   padding: int = 0) -> np.ndarray:
    """Stride-1 zero-padded cross-correlation plus per-channel bias."""
    _check_conv_args(x, w, padding)
    if b.shape != (w.shape[0],):
        raise ShapeError(f"bias must be ({w.shape[0]},), got {b.shape}")
    n, o, ho, wo = conv_out_shape(x.shape, w.shape, padding)
    cols = im2col(x, w.shape[2], padding)
    y = (w.reshape(o, -1) @ cols).reshape(o, n, ho, wo)
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3)) \
        + b[None, :, None, None]


def conv2d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray,
                    padding: int = 0):
    """Gradients (gx, gw, gb) of ``conv2d_forward`` for upstream ``gy``."""
    _check_conv_args(x, w, padding)
    if gy.shape != conv_out_shape(x.shape, w.shape, padding):
        raise ShapeError(
            f"upstream gradient shape {gy.shape} does not match output "
            f"shape {conv_out_shape(x.shape, w.shape, padding)}")
    o, k = w.shape[0], w.shape[2]
    gb = gy.sum(axis=(0, 2, 3))
    cols = im2col(x, k, padding)
    gy_mat = np.ascontiguousarray(gy.transpose(1, 0, 2, 3)).reshape(o, -1)
    gw = (gy_mat @ cols.T).reshape(w.shape)
    # input gradient: full correlation with the flipped kernel
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    gx = conv2d_forward(gy, w_t, np.zeros(w_t.shape[0], dtype=gy.dtype),
                        k - 1 - padding)
    return gx, gw, gb


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return expit(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_backward(x: np.ndarray, gy: np.ndarray,
                        kind: str) -> np.ndarray:
    """Gradient through the activation; ``x`` is the forward input."""
    if gy.shape != x.shape:
        raise ShapeError(
            f"gradient shape {gy.shape} does not match input {x.shape}")
    if kind == "relu":
        return gy * (x > 0)
    if kind == "sigmoid":
        p = expit(x)
        return gy * p * (1 - p)
    raise ValueError(f"unknown activation kind {kind!r}")


def _pool_windows(x: np.ndarray) -> np.ndarray:
    """(N, C, H/2, W/2, 4) window stack; last axis in row-major window
    order (top-left, top-right, bottom-left, bottom-right)."""
    if x.ndim != 4:
        raise ShapeError(f"input must be 4-d, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"spatial dims must be even for 2x2 pooling, "
                         f"got {h}x{w}")
    return (x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4))


def downsample(x: np.ndarray) -> np.ndarray:
    """2x2 max pooling with stride 2; ties go to the first element of
    the window in row-major order."""
    return _pool_windows(x).max(axis=-1)


def downsample_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Route gy to the element ``downsample`` selected per window."""
    win = _pool_windows(x)
    if gy.shape != win.shape[:4]:
        raise ShapeError(
            f"gradient shape {gy.shape} does not match pooled shape "
            f"{win.shape[:4]}")
    idx = win.argmax(axis=-1)
    gwin = np.zeros_like(win)
    np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=-1)
    n, c, h2, w2 = gy.shape
    return (gwin.reshape(n, c, h2, w2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h2 * 2, w2 * 2))


def upsample(x: np.ndarray) -> np.ndarray:
    """2x nearest-neighbor upsampling."""
    if x.ndim != 4:
        raise ShapeError(f"input must be 4-d, got {x.shape}")
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Sum each 2x2 block of gy back onto its source element."""
    n, c, h, w = x.shape
    if gy.shape != (n, c, 2 * h, 2 * w):
        raise ShapeError(
            f"gradient shape {gy.shape} does not match upsampled shape "
            f"{(n, c, 2 * h, 2 * w)}")
    return gy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def softplus(t: np.ndarray) -> np.ndarray:
    """log(1 + exp(t)) without overflow."""
    return np.maximum(t, 0) + np.log1p(np.exp(-np.abs(t)))


def bce_loss(logits: np.ndarray, target: np.ndarray,
             positive_class_weight: float = 1.0):
    """Mean binary cross-entropy on pre-sigmoid logits.

    Positive-class terms are scaled by ``positive_class_weight``.  Returns
    ``(loss, grad)`` where ``grad`` is d(loss)/d(logits).  The loss is
    accumulated in float64; the gradient keeps the logits' dtype.
    """
    if logits.shape != target.shape:
        raise ShapeError(
            f"logits shape {logits.shape} does not match target "
            f"{target.shape}")
    if positive_class_weight <= 0:
        raise ValueError("positive_class_weight must be positive")
    z = logits.astype(np.float64, copy=False)
    t = target.astype(np.float64, copy=False)
    terms = positive_class_weight * t * softplus(-z) + (1 - t) * softplus(z)
    loss = float(terms.mean())
    p = expit(logits)
    grad = (-positive_class_weight * target * (1 - p) + (1 - target) * p) / logits.size
    return loss, grad.astype(logits.dtype, copy=False)
