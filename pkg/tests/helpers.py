"""Small fixtures shared by the training, detection and pipeline tests."""

import numpy as np

from aclae_dt.feature_images import build_feature_image_set
from aclae_dt.model import ModelSpec
from aclae_dt.preprocess import TimeSeriesSet, make_windows

MINI_FILTERS = dict(encoder_filters=(2, 2, 1), decoder_filters=(1, 2, 2), attention_dim=3)


def tiny_image_set(n=8, T=120, d=10, step=5, h=2, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(T)
    values = 0.5 + 0.3 * np.sin(2 * np.pi * t / 12 + rng.uniform(0, 6, (n, 1))) + 0.05 * rng.normal(size=(n, T))
    ts = TimeSeriesSet(values, [f"s{i}" for i in range(n)], np.array(["e"] * T))
    return build_feature_image_set(ts, make_windows(ts, d, step), h)


def mini_spec(side=8, h=2, **kw):
    return ModelSpec(side, seq_len=h, **dict(MINI_FILTERS, **kw))
