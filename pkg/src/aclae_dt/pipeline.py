"""Run configuration and the end-to-end pipeline.

Stage order: load -> split -> normalise -> enrich -> construct images ->
model (train or search) -> errors -> thresholds -> detect -> persist.
"""

from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import persistence as io
from .detection import (
    AnomalyReport,
    ThresholdMatrix,
    detect,
    fit_thresholds,
    reconstruction_errors,
    root_cause_ranking,
    score,
)
from .feature_images import FeatureImageSet, build_feature_image_set
from .ingest import IngestError, dataset_files, ingest
from .model import ConvLSTMAutoencoder, ModelSpec, VARIANTS
from .preprocess import (
    ANOMALOUS,
    NORMAL,
    TimeSeriesSet,
    default_embedding_dim,
    init_embedding,
    make_windows,
    minmax_normalize,
)
from .synthetic import generate_synthetic
from .training import HyperparamConfig, random_search, reconstruct, split_validation, train

log = logging.getLogger(__name__)

PRESETS = {"exp1": (10, 2), "exp2": (30, 5), "exp3": (60, 10)}

# keys that change where or how fast a run happens but not its results
_UNHASHED = {"out_dir", "hpo_workers"}


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    data: str = "synthetic"            # "synthetic" or a schema manifest path
    files: list = field(default_factory=list)   # CSVs; default: every CSV beside the manifest
    synthetic: dict = field(default_factory=lambda: {
        "n": 8, "T": 5000, "experiments": 12, "anomaly_fraction": 0.25, "seed": 0, "context_levels": 0})
    preset: str | None = "exp2"
    d: int | None = None
    step: int | None = None
    h: int = 5
    z: float = 3.0
    epochs: int = 250
    variant: str = "full"
    cell_update: str = "printed"
    output: str = "sequence"
    activation: str = "tanh"
    learning_rate: float = 1e-3
    batch_size: int = 16
    optimizer: str = "Adam"
    loss: str = "MSE"
    hpo: bool = False
    hpo_trials: int = 20
    hpo_epochs: int = 30
    hpo_workers: int = 1
    train_fraction: float = 0.75       # share of normal experiments used for training
    val_fraction: float = 0.2
    error_reduce: str = "last"
    rolling: int | None = None
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ConfigError(f"unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}")
            pd, ps = PRESETS[self.preset]
            self.d = pd if self.d is None else self.d
            self.step = ps if self.step is None else self.step
        if self.d is None or self.step is None:
            raise ConfigError("set a preset or both d and step")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.cell_update not in ("printed", "standard"):
            raise ConfigError(f"cell_update must be 'printed' or 'standard', got {self.cell_update!r}")
        if self.d < 1 or self.step < 1 or self.h < 1 or self.epochs < 0 or self.z < 0:
            raise ConfigError("d, step and h must be >= 1, epochs and z >= 0")
        if not 0 < self.train_fraction < 1 or not 0 < self.val_fraction < 1:
            raise ConfigError("train_fraction and val_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return io.config_hash({k: v for k, v in self.to_dict().items() if k not in _UNHASHED})

    def hyper(self) -> HyperparamConfig:
        return HyperparamConfig(self.activation, self.learning_rate, self.batch_size, self.optimizer, self.loss)


@contextlib.contextmanager
def stage(name: str):
    log.info("stage: %s", name)
    try:
        yield
    except (PipelineError, ConfigError, IngestError):
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def load_data(cfg: RunConfig):
    """Raw ``TimeSeriesSet`` and the synthetic ground truth (``None`` for files)."""
    if cfg.data == "synthetic":
        return generate_synthetic(**cfg.synthetic)
    files = cfg.files or dataset_files(cfg.data)
    return ingest(files, cfg.data), None


def split_experiments(ts: TimeSeriesSet, train_fraction: float):
    """First ``train_fraction`` of normal experiments train; everything else is test."""
    exps = ts.experiments()
    if ts.anomalous is None:
        raise ConfigError("labels are required to choose normal training experiments")
    normal = [e for e in exps if not ts.anomalous[ts.experiment == e].any()]
    if len(normal) < 2:
        raise ConfigError("need at least two normal experiments")
    k = max(1, int(math.floor(len(normal) * train_fraction)))
    train_ids = normal[:k]
    return train_ids, [e for e in exps if e not in train_ids]


def init_tables(ts: TimeSeriesSet, seed: int) -> list:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return [init_embedding(c.name, c.q, default_embedding_dim(c.q) if c.q > 1 else 1, rng)
            for c in ts.context]


@dataclass
class Prepared:
    names: list
    train: FeatureImageSet
    val: FeatureImageSet
    test: FeatureImageSet
    scaler: object
    train_ids: list
    test_ids: list


def prepare(cfg: RunConfig, ts: TimeSeriesSet, tables: list | None = None, scaler=None,
            train_ids: list | None = None) -> Prepared:
    if train_ids is None:
        with stage("split"):
            train_ids, test_ids = split_experiments(ts, cfg.train_fraction)
    else:
        test_ids = [e for e in ts.experiments() if e not in train_ids]
    with stage("pre-process"):
        train_ts = ts.select_experiments(train_ids)
        test_ts = ts.select_experiments(test_ids)
        train_ts, scaler = minmax_normalize(train_ts, scaler if scaler is not None else train_ts)
        test_ts, _ = minmax_normalize(test_ts, scaler)
        w_train = make_windows(train_ts, cfg.d, cfg.step)
        w_test = make_windows(test_ts, cfg.d, cfg.step)
    with stage("enrich"):
        tables = init_tables(ts, cfg.seed) if tables is None else tables
    with stage("construct"):
        full_train = build_feature_image_set(train_ts, w_train, cfg.h, tables)
        test = build_feature_image_set(test_ts, w_test, cfg.h, tables)
        tr, va = split_validation(full_train, cfg.val_fraction)
        if len(tr) == 0 or len(va) < 2:
            raise ValueError("not enough training samples for a validation split")
    return Prepared(full_train.names, tr, va, test, scaler, train_ids, test_ids)


def model_spec(cfg: RunConfig, side: int, activation: str | None = None) -> ModelSpec:
    return ModelSpec.for_variant(cfg.variant, side, seq_len=cfg.h, activation=activation or cfg.activation,
                                 cell_update=cfg.cell_update, output=cfg.output)


def errors_for(model: ConvLSTMAutoencoder, data: FeatureImageSet, reduce: str):
    y_hat, y = reconstruct(model, data)
    if y.size == 0:
        return np.zeros((0, data.side, data.side)), y_hat, y
    return reconstruction_errors(y_hat, y, reduce), y_hat, y


def window_records(report: AnomalyReport, data: FeatureImageSet) -> list:
    labels = [data.windows.labels[w] for w in data.last_windows()]
    return [
        {"window": v.window, "start": v.start, "experiment": v.experiment, "label": lab,
         "flag": v.anomalous, "pairs": [[i, j, m] for i, j, m in v.pairs]}
        for v, lab in zip(report.verdicts, labels)
    ]


def run_detection(model, data: FeatureImageSet, thresholds: ThresholdMatrix, cfg: RunConfig, n_sensors: int):
    with stage("errors"):
        errs, y_hat, y = errors_for(model, data, cfg.error_reduce)
    with stage("detect"):
        last = data.last_windows()
        report = detect(errs, thresholds, data.names, windows=last, starts=data.windows.starts[last],
                        experiments=[data.windows.experiment[w] for w in last], rolling=cfg.rolling)
        # embedding pseudo-series describe operating context, not faults
        report.ranking, report.notice = root_cause_ranking(report, features=list(range(n_sensors)))
        labels = [data.windows.labels[w] for w in last]
        report.metrics = score(report.flags, labels)
    return report, errs, y_hat, y


def _side_diagonals(y: np.ndarray, reduce: str) -> np.ndarray:
    imgs = y[:, -1, 0] if reduce == "last" else y[:, :, 0].mean(axis=1)
    return np.diagonal(imgs, axis1=1, axis2=2)


def persist_detection(out: Path, cfg: RunConfig, report: AnomalyReport, data: FeatureImageSet,
                      thresholds: ThresholdMatrix, errs, y_hat, y, extra: dict | None = None) -> None:
    h, seed = cfg.hash(), cfg.seed
    records = window_records(report, data)
    payload = {
        "names": report.names,
        "variant": cfg.variant,
        "d": cfg.d,
        "step": cfg.step,
        "windows": records,
        "ranking": [[i, n, p] for i, n, p in report.ranking],
        "metrics": report.metrics.to_dict(),
        "experiments": report.experiments,
        "notice": report.notice,
    }
    payload.update(extra or {})
    io.write_json(out / "report.json", "report", payload, h, seed)
    io.write_json(out / "thresholds.json", "thresholds", thresholds.to_dict(), h, seed)
    cols = ["window", "experiment", "label", "flag"]
    for name in data.names:
        cols += [f"{name}:orig", f"{name}:recon", f"{name}:err"]
    rows = []
    if len(records):
        orig, rec = _side_diagonals(y, cfg.error_reduce), _side_diagonals(y_hat, cfg.error_reduce)
        diag = np.diagonal(errs, axis1=1, axis2=2)
        for k, r in enumerate(records):
            row = [r["window"], r["experiment"], r["label"], int(r["flag"])]
            for i in range(len(data.names)):
                row += [float(orig[k, i]), float(rec[k, i]), float(diag[k, i])]
            rows.append(row)
    io.write_table(out / "reconstruction.tsv", "reconstruction", cols, rows, h, seed)


def metrics_table(rows: list) -> str:
    """Precision / Recall / F1 / train-time table, one row per run."""
    head = f"{'Model':<16}{'d/step':>8}{'Precision':>11}{'Recall':>9}{'F1':>8}{'Train time (s)':>16}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['variant']:<16}{str(r['d']) + '/' + str(r['step']):>8}{r['precision']:>11.3f}"
                     f"{r['recall']:>9.3f}{r['f1']:>8.3f}{r['train_time']:>16.1f}")
    return "\n".join(lines)


def run_pipeline(cfg: RunConfig, print_table: bool = True) -> dict:
    """Execute every stage and persist artifacts under ``cfg.out_dir``; returns a summary."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, seed = cfg.hash(), cfg.seed
    io.write_json(out / "config.json", "config", cfg.to_dict(), h, seed)
    with stage("load"):
        ts, truth = load_data(cfg)
    prep = prepare(cfg, ts)
    n = ts.n
    log.info("train %d / val %d / test %d samples", len(prep.train), len(prep.val), len(prep.test))

    search = None
    hyper = cfg.hyper()
    if cfg.hpo:
        with stage("hpo"):
            search = random_search(model_spec(cfg, prep.train.side), prep.train, prep.val,
                                   cfg.hpo_trials, cfg.hpo_epochs, seed=cfg.seed, workers=cfg.hpo_workers)
            hyper = search.best
            io.write_json(out / "hpo.json", "hpo", search.to_dict(), h, seed)
    with stage("model"):
        model = ConvLSTMAutoencoder(model_spec(cfg, prep.train.side, hyper.activation), seed=cfg.seed)
        train_report = train(model, prep.train, hyper, cfg.epochs, seed=cfg.seed, val=prep.val)
    with stage("threshold"):
        # every normal training sample, fitted-on and held-out alike
        normal_errs = np.concatenate([errors_for(model, part, cfg.error_reduce)[0] for part in (prep.train, prep.val)])
        thresholds = fit_thresholds(normal_errs, cfg.z)
    report, errs, y_hat, y = run_detection(model, prep.test, thresholds, cfg, n)

    with stage("persist"):
        tr = train_report.to_dict()
        tr.update(train_experiments=prep.train_ids, test_experiments=prep.test_ids)
        io.write_json(out / "train_report.json", "train-report", tr, h, seed)
        io.save_checkpoint(out / "checkpoint.ckpt", model, prep.train.tables, prep.scaler, h, seed,
                           meta={"names": prep.names, "n_sensors": n, "d": cfg.d, "step": cfg.step,
                                 "train_experiments": prep.train_ids})
        if truth is not None:
            io.write_json(out / "truth.json", "truth", truth.to_dict(), h, seed)
        persist_detection(out, cfg, report, prep.test, thresholds, errs, y_hat, y,
                          extra={"train_time": train_report.train_time})
        emit_plot_data(out)

    m = report.metrics
    summary = {
        "variant": cfg.variant, "d": cfg.d, "step": cfg.step, "precision": m.precision,
        "recall": m.recall, "f1": m.f1, "train_time": train_report.train_time,
        "ranking": report.ranking, "config_hash": h, "seed": seed,
        "truth": truth.to_dict() if truth is not None else None,
        "hyper": hyper.to_dict(),
    }
    if print_table:
        print(metrics_table([summary]))
    return summary


def detect_with_run(run_dir, cfg: RunConfig, out_dir=None) -> AnomalyReport:
    """Score ``cfg``'s data with a finished run's checkpoint and thresholds."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    with stage("load"):
        ckpt = io.load_checkpoint(run_dir / "checkpoint.ckpt")
        thresholds = ThresholdMatrix.from_dict(io.read_json(run_dir / "thresholds.json", "thresholds"))
        ts, _ = load_data(cfg)
    prep = prepare(cfg, ts, tables=ckpt.tables, scaler=ckpt.scaler,
                   train_ids=[e for e in ckpt.meta.get("train_experiments", []) if e in ts.experiments()])
    report, errs, y_hat, y = run_detection(ckpt.model, prep.test, thresholds, cfg, ts.n)
    with stage("persist"):
        persist_detection(out, cfg, report, prep.test, thresholds, errs, y_hat, y)
    return report


def recount(report_payload: dict) -> dict:
    """Metrics recomputed from the persisted per-window records."""
    recs = report_payload["windows"]
    return score([r["flag"] for r in recs], [r["label"] for r in recs]).to_dict()


def emit_plot_data(run_dir, feature: str | None = None) -> list:
    """Panel files (a) normal, (b) anomalous, (c) errors with threshold, plus ranking bars."""
    run_dir = Path(run_dir)
    report = io.read_json(run_dir / "report.json", "report")
    thr = ThresholdMatrix.from_dict(io.read_json(run_dir / "thresholds.json", "thresholds"))
    _, cols, rows = io.read_table(run_dir / "reconstruction.tsv", "reconstruction")
    h, seed = report["config_hash"], report["seed"]
    names = report["names"]
    if feature is None:
        feature = report["ranking"][0][1] if report["ranking"] else names[0]
    if feature not in names:
        raise io.ArtifactError(f"unknown feature {feature!r}")
    i = names.index(feature)
    c_orig, c_rec, c_err = (cols.index(f"{feature}:{s}") for s in ("orig", "recon", "err"))
    eps = float(thr.epsilon[i, i])
    written = []
    for tag, label in (("a_normal", NORMAL), ("b_anomalous", ANOMALOUS)):
        sel = [r for r in rows if r[2] == label]
        written.append(io.write_table(
            run_dir / f"plot_{tag}.tsv", f"plot-{tag}", ["window", "experiment", "original", "reconstructed"],
            [[r[0], r[1], float(r[c_orig]), float(r[c_rec])] for r in sel], h, seed))
    written.append(io.write_table(
        run_dir / "plot_c_errors.tsv", "plot-c_errors", ["window", "experiment", "label", "error", "threshold"],
        [[r[0], r[1], r[2], float(r[c_err]), eps] for r in rows], h, seed))
    ranking = sorted(report["ranking"], key=lambda r: (-r[2], r[0]))
    written.append(io.write_table(
        run_dir / "plot_ranking.tsv", "plot-ranking", ["rank", "feature", "percent"],
        [[k + 1, r[1], float(r[2])] for k, r in enumerate(ranking)], h, seed))
    return written
