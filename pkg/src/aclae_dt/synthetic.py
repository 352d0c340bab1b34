"""Seeded synthetic multi-sensor experiments with injected anomalies.

Every series mixes three shared sinusoidal factors through a fixed loading
matrix, plus AR(1) noise, so normal data has a stable cross-correlation
structure. Failed experiments perturb the same few series for their whole
duration: an amplitude shift, a phase shift of the series' factors (which
breaks its correlation with the others while keeping its marginal range), or
sparse spikes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import make_rng
from .preprocess import ContextColumn, TimeSeriesSet

ANOMALY_TYPES = ("amplitude", "correlation", "spikes")
FACTOR_PERIODS = (6.0, 10.0, 15.0)
AR_COEF = 0.7
NOISE_STD = 0.06
CONTEXT_GAIN = (0.85, 1.0, 1.15)
AMPLITUDE = (1.15, 0.1)       # gain, shift applied to a perturbed series
SPIKE_RATE, SPIKE_SIZE = 0.08, (2.5, 4.0)


@dataclass
class GroundTruth:
    anomalous_experiments: list
    perturbed_series: list
    anomaly_types: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "anomalous_experiments": list(self.anomalous_experiments),
            "perturbed_series": list(self.perturbed_series),
            "anomaly_types": dict(self.anomaly_types),
        }


def _ar1(rng, length: int, n: int) -> np.ndarray:
    eps = rng.normal(0.0, NOISE_STD, size=(n, length))
    out = np.empty_like(eps)
    out[:, 0] = eps[:, 0]
    for t in range(1, length):
        out[:, t] = AR_COEF * out[:, t - 1] + eps[:, t]
    return out


def generate_synthetic(n: int = 8, T: int = 5000, experiments: int = 12,
                       anomaly_fraction: float = 0.25, seed: int = 0, n_perturbed: int = 3,
                       context_levels: int = 0, anomaly_types: tuple = ANOMALY_TYPES,
                       sample_rate: float = 10.0):
    """Build ``experiments`` consecutive runs totalling ``T`` steps.

    Normal runs mix three shared sinusoidal factors through a fixed loading
    matrix and add AR(1) noise. Anomalous runs perturb the same
    ``n_perturbed`` series for their whole duration with one seeded anomaly
    type each. With ``context_levels > 0`` every run also carries a
    categorical setting that scales signal amplitude.

    Returns ``(TimeSeriesSet, GroundTruth)``.
    """
    if n < 2:
        raise ValueError("need at least two series")
    if experiments < 1 or T < 10 * experiments:
        raise ValueError("each experiment needs at least 10 steps")
    if not 0.0 <= anomaly_fraction <= 1.0:
        raise ValueError("anomaly_fraction must be in [0, 1]")
    unknown = set(anomaly_types) - set(ANOMALY_TYPES)
    if unknown:
        raise ValueError(f"unknown anomaly types {sorted(unknown)}")
    rng = make_rng(seed)

    k = len(FACTOR_PERIODS)
    loadings = np.empty((n, k))
    loadings[:, 0] = rng.uniform(0.6, 1.0, n)
    loadings[:, 1:] = rng.uniform(-0.5, 0.5, (n, k - 1))
    offsets = rng.uniform(-1.0, 1.0, n)
    scales = rng.uniform(0.5, 2.0, n)

    n_anom = int(round(anomaly_fraction * experiments))
    anomalous_idx = sorted(rng.choice(experiments, size=n_anom, replace=False).tolist())
    perturbed = sorted(rng.choice(n, size=min(n_perturbed, n), replace=False).tolist())
    lengths = np.full(experiments, T // experiments)
    lengths[: T % experiments] += 1
    exp_names = [f"exp{e + 1:02d}" for e in range(experiments)]
    levels = rng.integers(0, context_levels, experiments) if context_levels else None

    blocks, exp_ids, labels, ctx_ids = [], [], [], []
    kinds = {}
    for e in range(experiments):
        length = int(lengths[e])
        t = np.arange(length)
        phases = rng.uniform(0, 2 * np.pi, (k, 1))
        factors = np.sin(2 * np.pi * t[None, :] / np.asarray(FACTOR_PERIODS)[:, None] + phases)
        gain = CONTEXT_GAIN[int(levels[e]) % len(CONTEXT_GAIN)] if levels is not None else 1.0
        signal = gain * loadings @ factors
        noise = _ar1(rng, length, n)
        is_anom = e in anomalous_idx
        if is_anom:
            kind = str(anomaly_types[int(rng.integers(len(anomaly_types)))])
            kinds[exp_names[e]] = kind
            for s in perturbed:
                if kind == "amplitude":
                    signal[s] = AMPLITUDE[0] * signal[s] + AMPLITUDE[1]
                elif kind == "correlation":
                    shift = rng.uniform(0.75 * np.pi, 1.25 * np.pi)
                    broken = np.sin(2 * np.pi * t[None, :] / np.asarray(FACTOR_PERIODS)[:, None] + phases + shift)
                    signal[s] = gain * loadings[s] @ broken
                else:
                    hits = rng.random(length) < SPIKE_RATE
                    signal[s] = signal[s] + hits * rng.choice([-1.0, 1.0], length) * rng.uniform(*SPIKE_SIZE, length)
        blocks.append(offsets[:, None] + scales[:, None] * (signal + noise))
        exp_ids.extend([exp_names[e]] * length)
        labels.extend([is_anom] * length)
        if levels is not None:
            ctx_ids.extend([int(levels[e])] * length)

    names = [f"S{i:02d}" for i in range(n)]
    context = []
    if levels is not None:
        context.append(ContextColumn("setting", np.asarray(ctx_ids, dtype=np.int64),
                                     [f"level{j}" for j in range(context_levels)]))
    ts = TimeSeriesSet(
        values=np.hstack(blocks),
        names=names,
        experiment=np.asarray(exp_ids),
        anomalous=np.asarray(labels, dtype=bool),
        context=context,
        sample_rate=sample_rate,
    )
    truth = GroundTruth([exp_names[e] for e in anomalous_idx], [names[s] for s in perturbed], kinds)
    return ts, truth
