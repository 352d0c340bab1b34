"""Mini-batch training and random-search hyperparameter optimisation."""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .feature_images import FeatureImageSet
from .model import LOSSES, ConvLSTMAutoencoder, ModelSpec, loss
from .optim import OPTIMIZERS, NonFiniteGradient, Optimizer
from .preprocess import init_embedding

log = logging.getLogger(__name__)

GRAD_CLIP = 5.0

GRID = {
    "activation": ("relu", "leaky_relu", "elu", "selu"),
    "learning_rate": (1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
    "batch_size": (16, 32, 64, 128, 256),
    "optimizer": OPTIMIZERS,
    "loss": LOSSES,
}


@dataclass(frozen=True)
class HyperparamConfig:
    activation: str = "tanh"
    learning_rate: float = 1e-3
    batch_size: int = 16
    optimizer: str = "Adam"
    loss: str = "MSE"

    def to_dict(self) -> dict:
        return asdict(self)


def grid_size() -> int:
    return math.prod(len(v) for v in GRID.values())


def grid_config(index: int) -> HyperparamConfig:
    """Config at a flat grid index (row-major over ``GRID`` in key order)."""
    if not 0 <= index < grid_size():
        raise IndexError(f"grid index {index} outside [0, {grid_size()})")
    values = {}
    for key in reversed(list(GRID)):
        options = GRID[key]
        index, r = divmod(index, len(options))
        values[key] = options[r]
    return HyperparamConfig(**values)


def enumerate_grid() -> list[HyperparamConfig]:
    return [HyperparamConfig(*combo) for combo in itertools.product(*GRID.values())]


def sample_trials(trials: int, seed: int) -> list[int]:
    """Grid indices drawn uniformly without replacement."""
    if trials < 1:
        raise ValueError("need at least one trial")
    if trials > grid_size():
        raise ValueError(f"{trials} trials requested but the grid has only {grid_size()} cells")
    return [int(i) for i in ad.make_rng(seed).permutation(grid_size())[:trials]]


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: float | None = None
    initial_loss: float | None = None
    final_loss: float | None = None
    train_time: float = 0.0
    epochs: int = 0
    seed: int = 0
    config: dict = field(default_factory=dict)
    status: str = "ok"

    def to_dict(self) -> dict:
        return asdict(self)


def trainable_parameters(model: ConvLSTMAutoencoder, data: FeatureImageSet) -> list:
    return model.parameters() + [t.weights for t in data.tables]


def reconstruct(model: ConvLSTMAutoencoder, data: FeatureImageSet, batch_size: int = 64):
    """Model output and target for every sample, as numpy ``(S, h', 1, H, W)`` arrays."""
    outs, targets = [], []
    with ad.no_grad():
        for lo in range(0, len(data), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(data)))
            x = data.batch(idx)
            outs.append(model(x).data)
            targets.append(model.target(x).data)
    if not outs:
        empty = np.zeros((0,))
        return empty, empty
    return np.concatenate(outs), np.concatenate(targets)


def evaluate(model: ConvLSTMAutoencoder, data: FeatureImageSet, kind: str = "MSE",
             batch_size: int = 64) -> float:
    """Reconstruction loss over the whole set (exact, not a mean of batch losses)."""
    y_hat, y = reconstruct(model, data, batch_size)
    if y.size == 0:
        return float("nan")
    diff = y_hat - y
    if kind == "MAE":
        return float(np.abs(diff).mean())
    mse = float((diff * diff).mean())
    return math.sqrt(mse) if kind == "RMSE" else mse


def train(model: ConvLSTMAutoencoder, data: FeatureImageSet, cfg: HyperparamConfig,
          epochs: int, seed: int = 0, val: FeatureImageSet | None = None,
          clip: float = GRAD_CLIP, track_initial: bool = True) -> TrainReport:
    """Fit ``model`` (and the context embeddings in ``data``) to reconstruct ``data``."""
    if len(data) == 0:
        raise ValueError("empty training set")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    rng = ad.make_rng(seed)
    params = trainable_parameters(model, data)
    opt = Optimizer(cfg.optimizer, params, cfg.learning_rate)
    report = TrainReport(seed=seed, config=cfg.to_dict())
    if track_initial:
        report.initial_loss = evaluate(model, data, cfg.loss)

    t0 = time.perf_counter()
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            x = data.batch(idx)
            y_hat = model(x)
            batch_loss = loss(y_hat, model.target(x), cfg.loss)
            batch_loss.backward()
            opt.clip_grad_norm(clip)
            opt.step()
            total += batch_loss.item() * len(idx)
            count += len(idx)
        report.train_loss.append(total / count)
        log.debug("epoch %d loss %.6g", epoch + 1, report.train_loss[-1])
    report.train_time = time.perf_counter() - t0
    report.epochs = epochs
    opt.zero_grad()

    if track_initial:
        report.final_loss = evaluate(model, data, cfg.loss)
    if val is not None and len(val):
        report.val_loss = evaluate(model, val, "MSE")
    return report


def split_validation(data: FeatureImageSet, fraction: float = 0.2):
    """Time-ordered split: the last ``fraction`` of samples become validation."""
    n_val = int(round(len(data) * fraction))
    n_train = len(data) - n_val
    return data.subset(np.arange(n_train)), data.subset(np.arange(n_train, len(data)))


def fresh_tables(tables: list, seed: int) -> list:
    """Re-initialise embedding tables with the same shapes (one per HPO trial)."""
    rng = ad.make_rng(seed)
    return [init_embedding(t.name, t.q, t.p, rng) for t in tables]


def with_tables(data: FeatureImageSet, tables: list) -> FeatureImageSet:
    return replace(data, tables=tables)


@dataclass
class Trial:
    index: int
    grid_index: int
    config: HyperparamConfig
    seed: int
    val_loss: float
    report: TrainReport


@dataclass
class SearchResult:
    best: HyperparamConfig
    best_trial: int
    trials: list

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "best_trial": self.best_trial,
            "trials": [
                {
                    "index": t.index,
                    "grid_index": t.grid_index,
                    "config": t.config.to_dict(),
                    "seed": t.seed,
                    "val_loss": t.val_loss if math.isfinite(t.val_loss) else None,
                    "status": t.report.status,
                    "train_loss": t.report.train_loss,
                    "train_time": t.report.train_time,
                }
                for t in self.trials
            ],
        }


def select_best(val_losses: list[float]) -> int:
    """Index of the smallest finite loss; ties resolve to the earlier trial."""
    best, best_val = -1, math.inf
    for i, v in enumerate(val_losses):
        if math.isfinite(v) and v < best_val:
            best, best_val = i, v
    if best < 0:
        raise RuntimeError("every trial diverged")
    return best


def _run_trial(args) -> Trial:
    k, grid_idx, base_spec, train_data, val_data, epochs, trial_seed = args
    cfg = grid_config(grid_idx)
    spec = replace(base_spec, activation=cfg.activation)
    tables = fresh_tables(train_data.tables, trial_seed)
    tr, va = with_tables(train_data, tables), with_tables(val_data, tables)
    model = ConvLSTMAutoencoder(spec, seed=trial_seed)
    try:
        report = train(model, tr, cfg, epochs, seed=trial_seed, val=va, track_initial=False)
        val_loss = report.val_loss if report.val_loss is not None else math.inf
    except (NonFiniteGradient, FloatingPointError) as exc:
        log.warning("trial %d (%s) diverged: %s", k, cfg, exc)
        report = TrainReport(seed=trial_seed, config=cfg.to_dict(), status=f"diverged: {exc}")
        val_loss = math.inf
    return Trial(k, grid_idx, cfg, trial_seed, val_loss, report)


def random_search(base_spec: ModelSpec, train_data: FeatureImageSet, val_data: FeatureImageSet,
                  trials: int, budget_epochs: int, seed: int = 0, workers: int = 1) -> SearchResult:
    """Sample ``trials`` grid cells without replacement, train each, keep the lowest validation MSE.

    Validation loss is always MSE so trials that optimise different losses
    stay comparable.
    """
    indices = sample_trials(trials, seed)
    seeds = np.random.SeedSequence(seed).generate_state(trials, dtype=np.uint32)
    jobs = [(k, gi, base_spec, train_data, val_data, budget_epochs, int(s))
            for k, (gi, s) in enumerate(zip(indices, seeds))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    best = select_best([t.val_loss for t in results])
    return SearchResult(results[best].config, best, results)
