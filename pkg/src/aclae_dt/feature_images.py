"""Correlation feature images over sliding windows.

For a window of ``d`` steps over ``m`` series the image is the scaled Gram
matrix ``M = X^T X / d`` (``X`` is ``d x m``), so ``M[i, j]`` is the mean
product of series ``i`` and ``j`` inside the window.

Context embeddings enter as pseudo-series ``V @ W`` where ``V`` is the
one-hot encoding of the categorical columns. Caching the Gram matrix of
``[X, V]`` per window lets images be rebuilt for any embedding table as
``P^T G P`` with ``P = blockdiag(I, W)``, which keeps the embedding
trainable through the image construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .preprocess import EmbeddingTable, TimeSeriesSet, WindowIndex, embedding_series_names


@dataclass
class FeatureImage:
    M: np.ndarray
    window_start: int
    names: list

    def pair(self, i: int, j: int) -> tuple[str, str]:
        return self.names[i], self.names[j]


def build_feature_image(window: np.ndarray) -> np.ndarray:
    """``(d, m)`` window slice -> ``(m, m)`` image of mean pairwise products."""
    window = np.ascontiguousarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] == 0:
        raise ValueError("window must be a non-empty (d, m) array")
    return kernels.window_gram(window, np.zeros(1, dtype=np.int64), window.shape[0])[0]


def build_images(values: np.ndarray, starts, d: int) -> np.ndarray:
    """Images for every window start; ``values`` is ``(m, T)``."""
    series = np.ascontiguousarray(np.asarray(values, dtype=np.float64).T)
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size and (starts.min() < 0 or starts.max() + d > series.shape[0]):
        raise ValueError("window extends past the end of the series")
    return kernels.window_gram(series, starts, d)


def build_sequences(n_images: int, h: int, group: np.ndarray | None = None) -> np.ndarray:
    """Indices of ``h`` consecutive images per sample, never crossing groups.

    Returns an ``(S, h)`` integer array; sample ``k`` of a group covers that
    group's images ``k .. k+h-1``.
    """
    if h < 1:
        raise ValueError("sequence length h must be >= 1")
    group = np.zeros(n_images, dtype=np.int64) if group is None else np.asarray(group)
    rows = []
    start = 0
    while start < n_images:
        end = start
        while end < n_images and group[end] == group[start]:
            end += 1
        count = end - start
        if count < h:
            warnings.warn(f"group {group[start]!r} has {count} images < h={h}; no samples", stacklevel=2)
        for k in range(start, end - h + 1):
            rows.append(np.arange(k, k + h))
        start = end
    return np.asarray(rows, dtype=np.int64).reshape(-1, h)


def onehot_block(ts: TimeSeriesSet, tables: list) -> np.ndarray:
    """``(sum q, T)`` one-hot rows for the context columns the tables embed."""
    by_name = {c.name: c for c in ts.context}
    blocks = []
    for t in tables:
        col = by_name[t.name]
        oh = np.zeros((t.q, ts.T))
        oh[col.ids, np.arange(ts.T)] = 1.0
        blocks.append(oh)
    return np.vstack(blocks) if blocks else np.zeros((0, ts.T))


def embedding_projection(n: int, tables: list) -> Tensor:
    """``blockdiag(I_n, W_1, ..., W_k)`` as a differentiable tensor."""
    q_tot = sum(t.q for t in tables)
    p_tot = sum(t.p for t in tables)
    top = ad.Tensor(np.hstack([np.eye(n), np.zeros((n, p_tot))]))
    rows = [top]
    col = 0
    for t in tables:
        left = np.zeros((t.q, n + col))
        right = np.zeros((t.q, p_tot - col - t.p))
        rows.append(ad.concat([ad.Tensor(left), t.weights, ad.Tensor(right)], axis=1))
        col += t.p
    out = ad.concat(rows, axis=0)
    assert out.shape == (n + q_tot, n + p_tot)
    return out


@dataclass
class FeatureImageSet:
    """Per-window Gram statistics plus the sample layout for the autoencoder."""

    gram: np.ndarray          # (K, n+Q, n+Q) over [sensors, one-hot]
    n_sensors: int
    tables: list              # EmbeddingTable objects (shared, trainable)
    windows: WindowIndex
    samples: np.ndarray       # (S, h) window indices
    names: list

    @property
    def h(self) -> int:
        return self.samples.shape[1]

    @property
    def side(self) -> int:
        return self.n_sensors + sum(t.p for t in self.tables)

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, sample_idx) -> "FeatureImageSet":
        return FeatureImageSet(self.gram, self.n_sensors, self.tables, self.windows,
                               self.samples[np.asarray(sample_idx, dtype=np.int64)], self.names)

    def last_windows(self) -> np.ndarray:
        """Window index of the last image of each sample."""
        return self.samples[:, -1]

    def images(self, window_idx) -> Tensor:
        """Feature images for the given window indices (any index array shape)."""
        window_idx = np.asarray(window_idx, dtype=np.int64)
        g = self.gram[window_idx]
        if not self.tables:
            return ad.Tensor(g)
        proj = embedding_projection(self.n_sensors, self.tables)
        return proj.T @ (ad.Tensor(g) @ proj)

    def batch(self, sample_idx) -> Tensor:
        """``(B, h, 1, side, side)`` model input for the given samples."""
        win = self.samples[np.asarray(sample_idx, dtype=np.int64)]
        imgs = self.images(win)
        return imgs.reshape(win.shape + (1, self.side, self.side))

    def all_images(self) -> np.ndarray:
        with ad.no_grad():
            return self.images(np.arange(len(self.windows))).data


def build_feature_image_set(ts: TimeSeriesSet, windows: WindowIndex, h: int,
                            tables: list | None = None) -> FeatureImageSet:
    """Cache window statistics for ``ts`` (already normalised) and lay out samples."""
    tables = list(tables or [])
    stacked = np.vstack([ts.values, onehot_block(ts, tables)])
    gram = build_images(stacked, windows.starts, windows.d)
    group = np.asarray([str(e) for e in windows.experiment])
    samples = build_sequences(len(windows), h, group)
    names = list(ts.names) + embedding_series_names(tables)
    return FeatureImageSet(gram, ts.n, tables, windows, samples, names)
