"""CSV ingestion driven by a JSON schema manifest.

A manifest names the sensor columns, optional categorical context columns,
and where the per-experiment pass/fail label lives. Example::

    {
      "delimiter": ",",
      "sensor_columns": ["X1_ActualPosition", "X1_OutputCurrent"],
      "context_columns": ["Machining_Process"],
      "ignore_columns": [],
      "experiment_column": null,
      "experiments_file": "train.csv",
      "experiment_id_field": "No",
      "label_field": "passed_visual_inspection",
      "fail_values": ["no", "fail", "false", "0"],
      "sample_rate": 10
    }

Without ``experiment_column`` each file is one experiment named after its
stem. ``experiments_file`` (relative to the manifest) holds one row per
experiment; ids are matched on their trailing integer so ``experiment_01``
pairs with ``1``. Gaps are forward-filled inside each experiment and
leading gaps back-filled.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .preprocess import ContextColumn, TimeSeriesSet

log = logging.getLogger(__name__)

MISSING = {"", "na", "nan", "null", "none"}


class IngestError(ValueError):
    """Malformed input; the message names the file and line when known."""


@dataclass
class IngestSchema:
    sensor_columns: list
    context_columns: list = field(default_factory=list)
    ignore_columns: list = field(default_factory=list)
    delimiter: str = ","
    experiment_column: str | None = None
    experiments_file: str | None = None
    experiment_id_field: str = "No"
    label_field: str | None = None
    fail_values: list = field(default_factory=lambda: ["no", "fail", "failed", "false", "0", "anomalous"])
    sample_rate: float = 1.0
    base_dir: Path = Path(".")

    @classmethod
    def load(cls, path) -> "IngestSchema":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestError(f"{path}: cannot read schema manifest: {exc}") from exc
        if not isinstance(raw, dict) or not raw.get("sensor_columns"):
            raise IngestError(f"{path}: manifest needs a non-empty 'sensor_columns' list")
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        extra = set(raw) - known
        if extra:
            raise IngestError(f"{path}: unknown manifest keys {sorted(extra)}")
        return cls(**raw, base_dir=path.parent)

    @property
    def columns(self) -> set:
        cols = set(self.sensor_columns) | set(self.context_columns) | set(self.ignore_columns)
        for c in (self.experiment_column, self.label_field if not self.experiments_file else None):
            if c:
                cols.add(c)
        return cols

    def is_fail(self, value: str) -> bool:
        return value.strip().lower() in {v.lower() for v in self.fail_values}


def _trailing_int(text: str):
    m = re.search(r"(\d+)$", str(text).strip())
    return int(m.group(1)) if m else str(text).strip()


def _read_experiment_labels(schema: IngestSchema) -> dict:
    path = schema.base_dir / schema.experiments_file
    labels = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh, delimiter=schema.delimiter)
            for field_name in (schema.experiment_id_field, schema.label_field):
                if field_name and field_name not in (reader.fieldnames or []):
                    raise IngestError(f"{path}: missing column {field_name!r}")
            for row in reader:
                key = _trailing_int(row[schema.experiment_id_field])
                labels[key] = schema.is_fail(row[schema.label_field]) if schema.label_field else None
    except OSError as exc:
        raise IngestError(f"{path}: {exc}") from exc
    return labels


def _fill(col: np.ndarray, where: str) -> np.ndarray:
    """Forward-fill NaNs, then back-fill a leading gap."""
    ok = ~np.isnan(col)
    if not ok.any():
        raise IngestError(f"{where}: column has no values")
    idx = np.where(ok, np.arange(len(col)), 0)
    np.maximum.accumulate(idx, out=idx)
    out = col[idx]
    first = np.argmax(ok)
    out[:first] = col[first]
    return out


def _read_file(path: Path, schema: IngestSchema):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestError(f"{path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}:1: empty file") from None
        for col in header:
            if col not in schema.columns:
                raise IngestError(f"{path}:1: unknown column {col!r} (not in schema manifest)")
        missing = [c for c in schema.sensor_columns + schema.context_columns if c not in header]
        if missing:
            raise IngestError(f"{path}:1: header lacks column {missing[0]!r}")
        pos = {c: header.index(c) for c in header}
        values, ctx, exp, lab = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rec = []
            for c in schema.sensor_columns:
                cell = row[pos[c]].strip()
                if cell.lower() in MISSING:
                    rec.append(np.nan)
                    continue
                try:
                    rec.append(float(cell))
                except ValueError:
                    raise IngestError(f"{path}:{lineno}: column {c!r} has non-numeric value {cell!r}") from None
            values.append(rec)
            ctx.append([row[pos[c]].strip() for c in schema.context_columns])
            exp.append(row[pos[schema.experiment_column]].strip() if schema.experiment_column else path.stem)
            if schema.label_field and not schema.experiments_file:
                lab.append(schema.is_fail(row[pos[schema.label_field]]))
    if not values:
        raise IngestError(f"{path}: no data rows")
    return np.asarray(values, dtype=np.float64), ctx, exp, lab


def ingest(paths, schema: IngestSchema | str | Path) -> TimeSeriesSet:
    """Read and concatenate per-experiment CSV files into one ``TimeSeriesSet``."""
    if not isinstance(schema, IngestSchema):
        schema = IngestSchema.load(schema)
    paths = [Path(p) for p in paths]
    if not paths:
        raise IngestError("no input files")
    exp_labels = _read_experiment_labels(schema) if schema.experiments_file else None

    blocks, ctx_rows, exp_ids, row_labels = [], [], [], []
    for path in paths:
        vals, ctx, exp, lab = _read_file(path, schema)
        # imputation never crosses experiment boundaries
        exp_arr = np.asarray(exp)
        for e in dict.fromkeys(exp):
            rows = exp_arr == e
            for j, name in enumerate(schema.sensor_columns):
                vals[rows, j] = _fill(vals[rows, j], f"{path}: experiment {e!r} column {name!r}")
        blocks.append(vals)
        ctx_rows.extend(ctx)
        exp_ids.extend(exp)
        row_labels.extend(lab)
        log.info("read %s: %d rows", path, len(vals))

    experiment = np.asarray(exp_ids)
    anomalous = None
    if exp_labels is not None:
        unknown = [e for e in dict.fromkeys(exp_ids) if _trailing_int(e) not in exp_labels]
        if unknown:
            raise IngestError(f"{schema.experiments_file}: no label row for experiment {unknown[0]!r}")
        fail = {e: exp_labels[_trailing_int(e)] for e in dict.fromkeys(exp_ids)}
        if all(v is not None for v in fail.values()):
            anomalous = np.array([fail[e] for e in exp_ids], dtype=bool)
    elif row_labels:
        # a fail label anywhere marks the whole experiment
        row_labels = np.asarray(row_labels, dtype=bool)
        failed = {e for e, f in zip(exp_ids, row_labels) if f}
        anomalous = np.array([e in failed for e in exp_ids], dtype=bool)

    context = []
    for k, name in enumerate(schema.context_columns):
        raw = [r[k] for r in ctx_rows]
        cats = sorted(set(raw))
        lookup = {c: i for i, c in enumerate(cats)}
        context.append(ContextColumn(name, np.array([lookup[v] for v in raw], dtype=np.int64), cats))

    return TimeSeriesSet(
        values=np.vstack(blocks).T,
        names=list(schema.sensor_columns),
        experiment=experiment,
        anomalous=anomalous,
        context=context,
        sample_rate=float(schema.sample_rate),
    )


def write_csv_dataset(ts: TimeSeriesSet, out_dir, delimiter: str = ",") -> Path:
    """Write one CSV per experiment plus a labels file and a matching manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx_names = [c.name for c in ts.context]
    for e in ts.experiments():
        rows = np.flatnonzero(ts.experiment == e)
        with open(out_dir / f"{e}.csv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(list(ts.names) + ctx_names)
            for t in rows:
                w.writerow([repr(float(v)) for v in ts.values[:, t]]
                           + [c.categories[c.ids[t]] for c in ts.context])
    manifest = {
        "delimiter": delimiter,
        "sensor_columns": list(ts.names),
        "context_columns": ctx_names,
        "sample_rate": ts.sample_rate,
    }
    if ts.anomalous is not None:
        with open(out_dir / "experiments.csv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(["No", "passed_visual_inspection"])
            for e in ts.experiments():
                failed = bool(ts.anomalous[ts.experiment == e].any())
                w.writerow([e, "no" if failed else "yes"])
        manifest.update(experiments_file="experiments.csv", experiment_id_field="No",
                        label_field="passed_visual_inspection")
    path = out_dir / "schema.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def dataset_files(manifest_path) -> list:
    """Experiment CSVs next to a manifest (everything except the labels file)."""
    schema = IngestSchema.load(manifest_path)
    skip = {schema.experiments_file} if schema.experiments_file else set()
    return sorted(p for p in schema.base_dir.glob("*.csv") if p.name not in skip)
