"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 ingestion error,
4 runtime (pipeline) error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import persistence as io
from .ingest import IngestError, dataset_files, ingest, write_csv_dataset
from .persistence import ArtifactError
from .pipeline import (
    ConfigError,
    PipelineError,
    RunConfig,
    detect_with_run,
    emit_plot_data,
    metrics_table,
    recount,
    run_pipeline,
)
from .synthetic import generate_synthetic

log = logging.getLogger("aclae_dt")

EXIT_OK, EXIT_CONFIG, EXIT_INGEST, EXIT_RUNTIME = 0, 2, 3, 4


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON RunConfig; its values override flags")
    p.add_argument("--data", help="'synthetic' or a schema manifest path")
    p.add_argument("--files", nargs="*", help="experiment CSVs (default: every CSV beside the manifest)")
    p.add_argument("--preset", choices=["exp1", "exp2", "exp3"])
    p.add_argument("--d", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--z", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--variant", choices=["full", "no-attention", "shallow"])
    p.add_argument("--cell-update", dest="cell_update", choices=["printed", "standard"])
    p.add_argument("--output", choices=["sequence", "last"])
    p.add_argument("--activation")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--optimizer")
    p.add_argument("--loss")
    p.add_argument("--hpo-trials", dest="hpo_trials", type=int)
    p.add_argument("--hpo-epochs", dest="hpo_epochs", type=int)
    p.add_argument("--hpo-workers", dest="hpo_workers", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--rolling", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--synth-n", type=int, help="synthetic: number of series")
    p.add_argument("--synth-T", type=int, help="synthetic: total timestamps")
    p.add_argument("--synth-experiments", type=int)
    p.add_argument("--synth-anomaly-fraction", type=float)
    p.add_argument("--synth-seed", type=int)
    p.add_argument("--synth-context-levels", type=int)


def config_from_args(args, base: dict | None = None, **forced) -> RunConfig:
    """Flags over ``base`` (defaults when absent), then the ``--config`` file, then ``forced``."""
    values = dict(base or {})
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    synth = dict(values.get("synthetic") or RunConfig().synthetic)
    for key in ("n", "T", "experiments", "anomaly_fraction", "seed", "context_levels"):
        v = getattr(args, f"synth_{key}", None)
        if v is not None:
            synth[key] = v
    values["synthetic"] = synth
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
        if "synthetic" in raw:
            raw["synthetic"] = dict(synth, **raw["synthetic"])
        values.update(raw)
    values.update(forced)
    return RunConfig.from_dict(values)


def cmd_synth(args) -> int:
    ts, truth = generate_synthetic(n=args.n, T=args.T, experiments=args.experiments,
                                   anomaly_fraction=args.anomaly_fraction, seed=args.seed,
                                   context_levels=args.context_levels)
    manifest = write_csv_dataset(ts, args.out)
    io.write_json(Path(args.out) / "truth.json", "truth", truth.to_dict(),
                  io.config_hash(vars(args) | {"func": None, "out": None}), args.seed)
    print(f"wrote {len(ts.experiments())} experiments ({ts.T} rows, {ts.n} series) to {args.out}")
    print(f"schema manifest: {manifest}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    files = args.files or dataset_files(args.schema)
    ts = ingest(files, args.schema)
    exps = ts.experiments()
    failed = [e for e in exps if ts.anomalous is not None and ts.anomalous[ts.experiment == e].any()]
    summary = {
        "series": ts.n, "timestamps": ts.T, "experiments": [str(e) for e in exps],
        "failed_experiments": [str(e) for e in failed],
        "context": {c.name: list(c.categories) for c in ts.context},
        "files": [str(f) for f in files],
    }
    print(f"{ts.n} series, T={ts.T}, {len(exps)} experiments, {len(failed)} failed inspection")
    if args.out:
        io.write_json(args.out, "dataset-summary", summary, io.config_hash(summary), 0)
    return EXIT_OK


def cmd_train(args) -> int:
    run_pipeline(config_from_args(args, hpo=False))
    return EXIT_OK


def cmd_hpo(args) -> int:
    run_pipeline(config_from_args(args, hpo=True))
    return EXIT_OK


def cmd_detect(args) -> int:
    saved = io.read_json(Path(args.run) / "config.json", "config")
    saved = {k: v for k, v in saved.items() if k not in ("config_hash", "seed")} | {"seed": saved["seed"]}
    cfg = config_from_args(args, base=saved)
    report = detect_with_run(args.run, cfg, out_dir=args.out_dir or args.run)
    m = report.metrics
    print(f"{int(report.flags.sum())} of {len(report.verdicts)} windows flagged; "
          f"precision {m.precision:.3f} recall {m.recall:.3f} F1 {m.f1:.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    rep = io.read_json(Path(args.run) / "report.json", "report")
    again = recount(rep)
    for key in ("tp", "fp", "fn", "tn"):
        if again[key] != rep["metrics"][key]:
            raise ArtifactError(f"report metrics disagree with per-window records ({key})")
    row = dict(rep["metrics"], variant=rep["variant"], d=rep["d"], step=rep["step"],
               train_time=rep.get("train_time") or 0.0)
    print(metrics_table([row]))
    print(f"config {rep['config_hash']} seed {rep['seed']}")
    if rep["ranking"]:
        print("root-cause ranking:")
        for k, (_, name, pct) in enumerate(rep["ranking"][: args.top]):
            print(f"  {k + 1:>2}. {name:<24}{pct:6.1f}%")
    elif rep.get("notice"):
        print(rep["notice"])
    return EXIT_OK


def cmd_plot_data(args) -> int:
    for path in emit_plot_data(args.run, args.feature):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aclae-dt", description="Feature-image ConvLSTM anomaly detection")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic CSV dataset with a schema manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--T", type=int, default=5000)
    p.add_argument("--experiments", type=int, default=12)
    p.add_argument("--anomaly-fraction", dest="anomaly_fraction", type=float, default=0.25)
    p.add_argument("--context-levels", dest="context_levels", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate CSVs against a schema manifest")
    p.add_argument("--schema", required=True)
    p.add_argument("files", nargs="*")
    p.add_argument("--out", help="write a dataset summary artifact")
    p.set_defaults(func=cmd_ingest)

    for name, func, text in (("train", cmd_train, "train with fixed hyperparameters, then detect"),
                             ("hpo", cmd_hpo, "random search, retrain the winner, then detect")):
        p = sub.add_parser(name, help=text)
        _add_run_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("detect", help="score data with a finished run")
    p.add_argument("--run", required=True)
    _add_run_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="print the metrics table of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot-data", help="write plot-ready panel files for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--feature", help="series to plot (default: top-ranked)")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (PipelineError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
