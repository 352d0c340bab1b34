"""Per-pair dynamic thresholds, anomaly flags, root-cause ranking and scoring."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .preprocess import ANOMALOUS, NORMAL

log = logging.getLogger(__name__)

DEFAULT_Z = 3.0


def reconstruction_errors(y_hat: np.ndarray, y: np.ndarray, reduce: str = "last") -> np.ndarray:
    """Absolute per-pair errors, one ``(m, m)`` matrix per sample.

    ``y_hat``/``y`` are ``(S, h, 1, m, m)`` (or ``(S, m, m)``). ``reduce`` picks
    the last image of each sequence or averages over the sequence.
    """
    y_hat, y = np.asarray(y_hat), np.asarray(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"reconstruction shape {y_hat.shape} != target shape {y.shape}")
    err = np.abs(y_hat - y)
    if err.ndim == 3:
        return err
    err = err[:, :, 0]
    if reduce == "last":
        return err[:, -1]
    if reduce == "mean":
        return err.mean(axis=1)
    raise ValueError(f"reduce must be 'last' or 'mean', got {reduce!r}")


@dataclass
class ThresholdMatrix:
    mu: np.ndarray
    sigma: np.ndarray
    z: float

    @property
    def epsilon(self) -> np.ndarray:
        return self.mu + self.z * self.sigma

    def to_dict(self) -> dict:
        return {"z": self.z, "mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdMatrix":
        return cls(np.asarray(d["mu"], dtype=np.float64), np.asarray(d["sigma"], dtype=np.float64), float(d["z"]))


def fit_thresholds(normal_errors, z: float = DEFAULT_Z) -> ThresholdMatrix:
    """``epsilon = mean + z * std`` per pair (population std) over normal error matrices."""
    errs = np.asarray(normal_errors, dtype=np.float64)
    if errs.ndim != 3 or errs.shape[0] < 2:
        raise ValueError("need at least 2 normal error matrices to fit thresholds")
    if z < 0:
        raise ValueError("z must be non-negative")
    return ThresholdMatrix(errs.mean(axis=0), errs.std(axis=0), float(z))


@dataclass
class WindowVerdict:
    window: int          # index into the WindowIndex
    start: int
    experiment: str
    anomalous: bool
    pairs: list = field(default_factory=list)  # (i, j, margin) with i <= j

    def features(self) -> set:
        return {i for i, _, _ in self.pairs} | {j for _, j, _ in self.pairs}


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    degenerate: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AnomalyReport:
    names: list
    verdicts: list
    ranking: list = field(default_factory=list)   # (feature index, name, percent)
    metrics: Metrics | None = None
    experiments: dict = field(default_factory=dict)
    notice: str = ""

    @property
    def flags(self) -> np.ndarray:
        return np.array([v.anomalous for v in self.verdicts], dtype=bool)


def violations(errors: np.ndarray, eps: np.ndarray) -> list:
    """Upper-triangle pairs with ``error > epsilon`` (strict) and their margins."""
    ii, jj = np.nonzero(np.triu(errors > eps))
    return [(int(i), int(j), float(errors[i, j] - eps[i, j])) for i, j in zip(ii, jj)]


def detect(errors, thresholds: ThresholdMatrix, names: list, windows=None, starts=None,
           experiments=None, rolling: int | None = None) -> AnomalyReport:
    """Flag each error matrix whose pairs exceed their thresholds.

    With ``rolling=k`` the thresholds are re-fitted after every window from
    the ``k`` most recent windows judged normal (seeded with the fitted
    statistics' window); otherwise they stay fixed.
    """
    errors = np.asarray(errors, dtype=np.float64)
    m = thresholds.mu.shape
    if errors.ndim != 3 or errors.shape[1:] != m:
        raise ValueError(f"error matrices {errors.shape[1:]} do not match thresholds {m}")
    count = errors.shape[0]
    windows = np.arange(count) if windows is None else np.asarray(windows)
    starts = np.zeros(count, dtype=np.int64) if starts is None else np.asarray(starts)
    experiments = [""] * count if experiments is None else list(experiments)

    eps = thresholds.epsilon
    buffer = deque(maxlen=rolling) if rolling else None
    verdicts = []
    for k in range(count):
        pairs = violations(errors[k], eps)
        verdicts.append(WindowVerdict(int(windows[k]), int(starts[k]), str(experiments[k]), bool(pairs), pairs))
        if buffer is not None and not pairs:
            buffer.append(errors[k])
            if len(buffer) >= 2:
                eps = fit_thresholds(np.asarray(buffer), thresholds.z).epsilon

    rollup: dict = {}
    for v in verdicts:
        rollup[v.experiment] = rollup.get(v.experiment, False) or v.anomalous
    report = AnomalyReport(list(names), verdicts, experiments=rollup)
    report.ranking, report.notice = root_cause_ranking(report)
    return report


def root_cause_ranking(report: AnomalyReport, features: list | None = None):
    """Share (%) of anomalous windows in which each feature has a violating pair.

    Returns ``(ranking, notice)``; ranking rows are ``(index, name, percent)``
    sorted by percent descending, then feature index. ``features`` limits the
    ranking to a subset of feature indices.
    """
    flagged = [v for v in report.verdicts if v.anomalous]
    if not flagged:
        return [], "no anomalous windows; nothing to rank"
    candidates = range(len(report.names)) if features is None else features
    hits = {i: 0 for i in candidates}
    for v in flagged:
        for f in v.features():
            if f in hits:
                hits[f] += 1
    rows = [(i, report.names[i], 100.0 * c / len(flagged)) for i, c in hits.items()]
    rows.sort(key=lambda r: (-r[2], r[0]))
    return rows, ""


def score(flags, labels) -> Metrics:
    """Precision / recall / F1 of window flags against ``normal``/``anomalous`` labels."""
    flags = np.asarray(flags, dtype=bool)
    labels = list(labels)
    if len(labels) != len(flags):
        raise ValueError(f"{len(labels)} labels for {len(flags)} windows")
    truth = np.array([lab == ANOMALOUS for lab in labels], dtype=bool)
    known = np.array([lab in (ANOMALOUS, NORMAL) for lab in labels], dtype=bool)
    f, t = flags[known], truth[known]
    tp = int((f & t).sum())
    fp = int((f & ~t).sum())
    fn = int((~f & t).sum())
    tn = int((~f & ~t).sum())
    degenerate = []
    if tp + fp == 0:
        degenerate.append("no predicted positives")
    if tp + fn == 0:
        degenerate.append("no actual positives")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        f1 = 0.0
        degenerate.append("precision + recall == 0")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(tp, fp, fn, tn, precision, recall, f1, degenerate)
