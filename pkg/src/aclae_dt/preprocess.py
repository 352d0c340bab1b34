"""Normalisation, sliding windows and categorical context embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import glorot_uniform

NORMAL, ANOMALOUS, UNKNOWN = "normal", "anomalous", "unknown"


@dataclass
class ContextColumn:
    """One categorical variable: per-timestamp category ids in ``[0, q)``."""

    name: str
    ids: np.ndarray
    categories: list

    @property
    def q(self) -> int:
        return len(self.categories)


@dataclass
class TimeSeriesSet:
    """``values`` is ``(n, T)``: one row per series."""

    values: np.ndarray
    names: list
    experiment: np.ndarray
    anomalous: np.ndarray | None = None  # per-timestamp ground truth, if known
    context: list = field(default_factory=list)
    sample_rate: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be (n, T)")
        if len(self.names) != self.values.shape[0]:
            raise ValueError(f"{len(self.names)} names for {self.values.shape[0]} series")
        self.experiment = np.asarray(self.experiment)
        if self.experiment.shape != (self.T,):
            raise ValueError("experiment id needed for every timestamp")
        if np.isnan(self.values).any():
            raise ValueError("missing values must be imputed before building a TimeSeriesSet")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def experiments(self) -> list:
        """Experiment ids in order of first appearance."""
        _, first = np.unique(self.experiment, return_index=True)
        return [self.experiment[i] for i in sorted(first)]

    def select(self, mask: np.ndarray) -> "TimeSeriesSet":
        return replace(
            self,
            values=self.values[:, mask],
            experiment=self.experiment[mask],
            anomalous=None if self.anomalous is None else self.anomalous[mask],
            context=[ContextColumn(c.name, c.ids[mask], c.categories) for c in self.context],
        )

    def select_experiments(self, ids) -> "TimeSeriesSet":
        return self.select(np.isin(self.experiment, list(ids)))


@dataclass
class MinMaxScaler:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "MinMaxScaler":
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] == 0:
            raise ValueError("cannot fit min/max on an empty series")
        return cls(values.min(axis=1), values.max(axis=1))

    def transform(self, values: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        out = (np.asarray(values, dtype=np.float64) - self.lo[:, None]) / safe[:, None]
        # constant training series carry no scale information
        out[span <= 0] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxScaler":
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def minmax_normalize(x: TimeSeriesSet, fitted_on: TimeSeriesSet | MinMaxScaler | None = None):
    """Scale each series to [0, 1] using min/max of the training split.

    Returns ``(normalized_set, scaler)``. Values outside the training range
    map outside [0, 1].
    """
    if x.T == 0:
        raise ValueError("cannot normalise an empty series")
    if isinstance(fitted_on, MinMaxScaler):
        scaler = fitted_on
    else:
        scaler = MinMaxScaler.fit((fitted_on or x).values)
    return replace(x, values=scaler.transform(x.values)), scaler


@dataclass
class WindowIndex:
    d: int
    step: int
    starts: np.ndarray
    labels: list
    experiment: list

    def __len__(self) -> int:
        return len(self.starts)

    def counts(self) -> dict:
        return {lab: self.labels.count(lab) for lab in (NORMAL, ANOMALOUS, UNKNOWN)}


def window_count(T: int, d: int, step: int) -> int:
    return (T - d) // step + 1 if T >= d else 0


def make_windows(x: TimeSeriesSet, d: int, step: int) -> WindowIndex:
    """Length-``d`` windows every ``step`` samples, restarted at each experiment.

    A window is anomalous iff any of its timestamps is anomalous.
    """
    if d < 1 or step < 1:
        raise ValueError("window size and step must be >= 1")
    if d > x.T:
        raise ValueError(f"window size {d} exceeds series length {x.T}")
    starts, labels, exps = [], [], []
    for exp in x.experiments():
        idx = np.flatnonzero(x.experiment == exp)
        lo, length = idx[0], len(idx)
        if idx[-1] - lo + 1 != length:
            raise ValueError(f"timestamps of experiment {exp!r} are not contiguous")
        for k in range(window_count(length, d, step)):
            s = lo + k * step
            starts.append(s)
            exps.append(exp)
            if x.anomalous is None:
                labels.append(UNKNOWN)
            else:
                labels.append(ANOMALOUS if x.anomalous[s:s + d].any() else NORMAL)
    return WindowIndex(d, step, np.asarray(starts, dtype=np.int64), labels, exps)


def default_embedding_dim(q: int) -> int:
    return max(1, min(math.ceil(q / 2), 8))


@dataclass
class EmbeddingTable:
    name: str
    weights: Tensor  # (q, p)

    @property
    def q(self) -> int:
        return self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.weights.shape[1]


def init_embedding(name: str, q: int, p: int | None = None, rng=None) -> EmbeddingTable:
    p = default_embedding_dim(q) if p is None else p
    if q > 1 and p >= q:
        raise ValueError(f"embedding dim p={p} must be smaller than category count q={q}")
    rng = rng if rng is not None else ad.make_rng(0)
    w = glorot_uniform(rng, (q, p), q, p)
    return EmbeddingTable(name, Tensor(w, requires_grad=True))


def embed_context(table: EmbeddingTable, v) -> Tensor:
    """Row ``v`` of the table, i.e. ``onehot(v) @ W``; differentiable in W."""
    ids = np.asarray(v)
    if ids.size and (ids.min() < 0 or ids.max() >= table.q):
        raise IndexError(f"category id out of range [0, {table.q}) for {table.name!r}")
    return ad.take_rows(table.weights, ids)


def embedding_series_names(tables: list) -> list:
    return [f"{t.name}[{k}]" for t in tables for k in range(t.p)]


def enrich(x: TimeSeriesSet, tables: list) -> TimeSeriesSet:
    """Append the embedding of every context column as ``p`` pseudo-series each."""
    if not tables:
        return x
    by_name = {c.name: c for c in x.context}
    rows = [x.values]
    for table in tables:
        col = by_name[table.name]
        with ad.no_grad():
            rows.append(embed_context(table, col.ids).data.T)
    return replace(
        x,
        values=np.vstack(rows),
        names=list(x.names) + embedding_series_names(tables),
    )
