"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with an identical
signature; :mod:`aclae_dt.kernels` picks one at import time.
"""

import numpy as np


def im2col(xp, f, stride, ho, wo):
    """Unfold padded input ``(N, C, Hp, Wp)`` into ``(C*f*f, N*ho*wo)`` columns."""
    n, c = xp.shape[:2]
    cols = np.empty((c, f, f, n, ho, wo), dtype=np.float64)
    for ki in range(f):
        i_end = ki + stride * ho
        for kj in range(f):
            j_end = kj + stride * wo
            cols[:, ki, kj] = xp[:, :, ki:i_end:stride, kj:j_end:stride].transpose(1, 0, 2, 3)
    return cols.reshape(c * f * f, n * ho * wo)


def col2im(cols, n, c, hp, wp, f, stride, ho, wo):
    """Scatter-add columns back into a padded ``(N, C, Hp, Wp)`` gradient."""
    dxp = np.zeros((n, c, hp, wp), dtype=np.float64)
    cols6 = cols.reshape(c, f, f, n, ho, wo)
    for ki in range(f):
        i_end = ki + stride * ho
        for kj in range(f):
            j_end = kj + stride * wo
            dxp[:, :, ki:i_end:stride, kj:j_end:stride] += cols6[:, ki, kj].transpose(1, 0, 2, 3)
    return dxp


def maxpool2x2_forward(x):
    """2x2 stride-2 max pooling, ceil mode.

    Returns the pooled array and, per output cell, the flat ``H*W`` index of
    the winning input element (first row-major maximum on ties).
    """
    n, c, h, w = x.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    if h % 2 or w % 2:
        xp = np.full((n, c, 2 * ho, 2 * wo), -np.inf)
        xp[:, :, :h, :w] = x
    else:
        xp = x
    blocks = xp.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    local = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, local[..., None], axis=-1)[..., 0]
    rows = 2 * np.arange(ho)[:, None] + local // 2
    cols = 2 * np.arange(wo)[None, :] + local % 2
    return out, (rows * w + cols).astype(np.int64)


def maxpool2x2_backward(grad, argmax, h, w):
    n, c = grad.shape[:2]
    dx = np.zeros((n * c, h * w), dtype=np.float64)
    flat_idx = argmax.reshape(n * c, -1)
    np.add.at(dx, (np.arange(n * c)[:, None], flat_idx), grad.reshape(n * c, -1))
    return dx.reshape(n, c, h, w)


def upsample2x2_backward(grad, h, w):
    """Sum each replicated 2x2 block of ``grad`` (cropped to any size) back to ``(h, w)``."""
    n, c, ht, wt = grad.shape
    if ht != 2 * h or wt != 2 * w:
        full = np.zeros((n, c, 2 * h, 2 * w), dtype=np.float64)
        full[:, :, :ht, :wt] = grad
        grad = full
    return grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


def window_gram(series, starts, d):
    """Scaled inner products ``X_w^T X_w / d`` for every window.

    ``series`` is ``(T, n)``; returns ``(len(starts), n, n)``.
    """
    idx = np.asarray(starts, dtype=np.int64)[:, None] + np.arange(d)
    win = series[idx]
    return np.einsum("kti,ktj->kij", win, win) / d
