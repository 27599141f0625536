"""Convolution execution engine: compiled direct loops + shift-GEMM.

Two routes compute the same contract (stride-1 zero-padded
cross-correlation, NCHW):

* direct: explicit loops compiled by numba, vectorized along the
  contiguous image width —

      y[n,o,h,:] += w[o,c,ky,kx] * xp[n,c,h+ky, kx:kx+W]

  Reads each source row once per sweep, so it wins when the rows are
  long and the channel count is small (the early, wide layers).

* shift-GEMM: the padded batch is flattened channel-major into a
  ``(C, N*Hp*Wp)`` matrix and each kernel tap becomes one BLAS product
  against a column-shifted view — tap (ky, kx) reads the same matrix
  at column offset ``ky*Wp + kx``.  Anchors whose receptive field spans
  a row or image boundary produce garbage that is sliced away when the
  interior is extracted (for the weight gradient they are cancelled by
  zeros in the inflated output-gradient matrix).  Unlike an im2col
  patch matrix, the flattened input is no bigger than the activation
  itself, which keeps the training-time working set small.

Narrow or channel-heavy layers run shift-GEMM; wide shallow ones run
direct.  The dispatch is a fixed function of the shape so a given layer
always takes the same route and results stay bit-reproducible across
runs.  Strict IEEE semantics everywhere (``fastmath`` off); both routes
agree with each other and with :mod:`.ops` to float rounding, which the
test suite asserts.

``conv_fwd`` returns an opaque per-layer context that ``conv_gw``
consumes, so whichever intermediate the active route needs (padded
input or flattened matrix) is computed exactly once per forward pass.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from . import ops

# the direct route needs rows at least this long to vectorize well
DIRECT_MIN_WIDTH = 96
# ... and loses to one-GEMM-per-tap once the input is channel-heavy
DIRECT_MAX_CIN = 16

_JIT = dict(cache=True, fastmath=False, nogil=True)


@njit(**_JIT)
def _direct_fwd(xp, w, b, ho, wo):
    # Two output channels per sweep so every loaded source row is used
    # twice; per-element accumulation order stays (c, ky, kx), identical
    # to the single-channel form.
    n, ci = xp.shape[0], xp.shape[1]
    co, k = w.shape[0], w.shape[2]
    y = np.empty((n, co, ho, wo), dtype=xp.dtype)
    for i in range(n):
        for o in range(0, co, 2):
            paired = o + 1 < co
            b0 = b[o]
            b1 = b[o + 1] if paired else b[o]
            for h in range(ho):
                d0 = y[i, o, h]
                d1 = y[i, o + 1, h] if paired else y[i, o, h]
                for x in range(wo):
                    d0[x] = b0
                if paired:
                    for x in range(wo):
                        d1[x] = b1
                for c in range(ci):
                    src = xp[i, c]
                    for ky in range(k):
                        srow = src[h + ky]
                        for kx in range(k):
                            w0 = w[o, c, ky, kx]
                            if paired:
                                w1 = w[o + 1, c, ky, kx]
                                for x in range(wo):
                                    s = srow[x + kx]
                                    d0[x] += w0 * s
                                    d1[x] += w1 * s
                            else:
                                for x in range(wo):
                                    d0[x] += w0 * srow[x + kx]
    return y


@njit(**_JIT)
def _direct_gw(gy, xp, k):
    # Accumulates each (o, c, ky, kx) product into a row-length buffer
    # (vectorizable elementwise FMA; a direct scalar reduction would be
    # serialized by strict float semantics), then reduces the buffer in
    # one fixed-order pass.  All kx taps for a (o, c, ky) triple share
    # one sweep over h so the gradient and source rows stay cached.
    n, co, ho, wo = gy.shape
    ci = xp.shape[1]
    gw = np.zeros((co, ci, k, k), dtype=gy.dtype)
    tmp = np.empty((k, wo), dtype=gy.dtype)
    for i in range(n):
        for o in range(co):
            gplane = gy[i, o]
            for c in range(ci):
                src = xp[i, c]
                for ky in range(k):
                    for kx in range(k):
                        for x in range(wo):
                            tmp[kx, x] = 0
                    for h in range(ho):
                        grow = gplane[h]
                        srow = src[h + ky]
                        for kx in range(k):
                            trow = tmp[kx]
                            for x in range(wo):
                                trow[x] += grow[x] * srow[x + kx]
                    for kx in range(k):
                        s = gy.dtype.type(0)
                        for x in range(wo):
                            s += tmp[kx, x]
                        gw[o, c, ky, kx] += s
    return gw


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (padding, padding),
                      (padding, padding)))


def _use_direct(out_width: int, k: int, c_in: int) -> bool:
    return (k > 1 and out_width >= DIRECT_MIN_WIDTH
            and c_in <= DIRECT_MAX_CIN)


def _flatten(xp: np.ndarray, k: int):
    """Channel-major flat view of the padded batch plus zero margin.

    Returns ``(flat, geometry)`` where ``flat`` is ``(C, G + R)`` with
    the image grid in columns ``[0, G)`` and ``R`` zero columns so the
    last image's tap reads stay in bounds.
    """
    n, ci, hp, wp = xp.shape
    grid = n * hp * wp
    margin = (k - 1) * (wp + 1)
    flat = np.empty((ci, grid + margin), dtype=xp.dtype)
    flat[:, :grid] = xp.transpose(1, 0, 2, 3).reshape(ci, grid)
    if margin:
        flat[:, grid:] = 0
    return flat, (n, hp, wp)


def _shift_fwd(x, w, b, padding, ho, wo):
    k = w.shape[2]
    flat, (n, hp, wp) = _flatten(_pad(x, padding), k)
    co, grid = w.shape[0], n * hp * wp
    yflat = np.zeros((co, grid), dtype=x.dtype)
    tmp = np.empty((co, grid), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            off = ky * wp + kx
            np.matmul(np.ascontiguousarray(w[:, :, ky, kx]),
                      flat[:, off:off + grid], out=tmp)
            yflat += tmp
    y = yflat.reshape(co, n, hp, wp)[:, :, :ho, :wo]
    y = np.ascontiguousarray(y.transpose(1, 0, 2, 3))
    y += b.astype(x.dtype, copy=False)[None, :, None, None]
    return y, ("shift", (flat, (n, hp, wp, ho, wo)))


def _shift_gw(gy, saved, w_shape):
    flat, (n, hp, wp, ho, wo) = saved
    co, ci, k, _ = w_shape
    grid = n * hp * wp
    # gy inflated onto the padded grid: zeros at non-anchor positions
    # cancel the out-of-range products of the shifted reads
    gyflat = np.zeros((co, grid), dtype=gy.dtype)
    gyflat.reshape(co, n, hp, wp)[:, :, :ho, :wo] = gy.transpose(1, 0, 2, 3)
    taps = np.empty((k * k, co, ci), dtype=gy.dtype)
    for ky in range(k):
        for kx in range(k):
            off = ky * wp + kx
            np.matmul(gyflat, flat[:, off:off + grid].T,
                      out=taps[ky * k + kx])
    return np.ascontiguousarray(
        taps.reshape(k, k, co, ci).transpose(2, 3, 0, 1))


def conv_fwd(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: int):
    """Convolution; returns (y, ctx) where ctx feeds ``conv_gw``."""
    n, o, ho, wo = ops.conv_out_shape(x.shape, w.shape, padding)
    k = w.shape[2]
    if _use_direct(wo, k, w.shape[1]):
        xp = _pad(x, padding)
        y = _direct_fwd(xp, np.ascontiguousarray(w),
                        b.astype(x.dtype, copy=False), ho, wo)
        return y, ("direct", xp)
    return _shift_fwd(x, w, b, padding, ho, wo)


def conv_gw(gy: np.ndarray, ctx: tuple, w_shape: tuple) -> np.ndarray:
    """Weight gradient (O, C, k, k) from the forward context."""
    route, saved = ctx
    if route == "direct":
        return _direct_gw(np.ascontiguousarray(gy), saved, w_shape[2])
    return _shift_gw(np.ascontiguousarray(gy), saved, w_shape)


def conv_gx(gy: np.ndarray, w: np.ndarray, padding: int) -> np.ndarray:
    """Input gradient: full correlation of gy with the flipped kernel,
    in/out channels swapped — a forward pass with transformed weights."""
    k = w.shape[2]
    w_t = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zero_b = np.zeros(w.shape[1], dtype=gy.dtype)
    gx, _ = conv_fwd(gy, w_t, zero_b, k - 1 - padding)
    return gx
