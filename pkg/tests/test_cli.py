import json

import numpy as np
import pytest

from aclae_dt import persistence as io
from aclae_dt.cli import EXIT_CONFIG, EXIT_INGEST, EXIT_OK, EXIT_RUNTIME, main
from aclae_dt.pipeline import RunConfig, recount, run_pipeline

SMALL = ["--synth-n", "8", "--synth-T", "1200", "--synth-experiments", "6",
         "--synth-anomaly-fraction", "0.34", "--h", "2", "--epochs", "1", "--seed", "3"]

ARTIFACTS = ["config.json", "checkpoint.ckpt", "train_report.json", "thresholds.json", "report.json",
             "reconstruction.tsv", "plot_a_normal.tsv", "plot_b_anomalous.tsv", "plot_c_errors.tsv",
             "plot_ranking.tsv", "truth.json"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", *SMALL, "--out", str(out)]) == EXIT_OK
    return out


def test_train_emits_all_artifacts(run_dir):
    for name in ARTIFACTS:
        path = run_dir / name
        assert path.exists(), name
        assert path.read_text().startswith("#aclae-dt ")


def test_every_artifact_carries_hash_and_seed(run_dir):
    cfg = io.read_json(run_dir / "config.json", "config")
    for name in ARTIFACTS:
        text = (run_dir / name).read_text()
        assert cfg["config_hash"] in text and "seed" in text, name
    assert cfg["seed"] == 3


def test_report_metrics_recount(run_dir):
    rep = io.read_json(run_dir / "report.json", "report")
    again = recount(rep)
    for k in ("tp", "fp", "fn", "tn", "precision", "recall", "f1"):
        assert again[k] == rep["metrics"][k]


def test_plot_files_are_consistent(run_dir):
    rep = io.read_json(run_dir / "report.json", "report")
    thr = io.read_json(run_dir / "thresholds.json", "thresholds")
    eps = np.asarray(thr["mu"]) + thr["z"] * np.asarray(thr["sigma"])
    _, cols, rows = io.read_table(run_dir / "plot_c_errors.tsv")
    feature = rep["ranking"][0][1] if rep["ranking"] else rep["names"][0]
    i = rep["names"].index(feature)
    assert {float(r[cols.index("threshold")]) for r in rows} == {eps[i, i]}
    _, _, ranking = io.read_table(run_dir / "plot_ranking.tsv")
    pct = [float(r[2]) for r in ranking]
    assert pct == sorted(pct, reverse=True)
    normal_flags = [w["flag"] for w in rep["windows"] if w["label"] == "normal"]
    if not any(normal_flags):
        for r in rows:
            if r[2] == "normal":
                assert float(r[3]) <= float(r[4])


def test_report_and_plot_commands(run_dir, capsys):
    assert main(["report", "--run", str(run_dir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Precision" in out and "F1" in out and "Train time" in out
    assert main(["plot-data", "--run", str(run_dir), "--feature", "S01"]) == EXIT_OK


def test_detect_command_reuses_run(run_dir, tmp_path):
    assert main(["detect", "--run", str(run_dir), "--out", str(tmp_path)]) == EXIT_OK
    a = io.read_json(run_dir / "report.json", "report")
    b = io.read_json(tmp_path / "report.json", "report")
    assert a["metrics"] == b["metrics"]


def test_rerun_is_byte_identical(run_dir, tmp_path):
    assert main(["train", *SMALL, "--out", str(tmp_path)]) == EXIT_OK
    for name in ("checkpoint.ckpt", "thresholds.json", "reconstruction.tsv"):
        assert (run_dir / name).read_bytes() == (tmp_path / name).read_bytes(), name
    a = io.read_json(run_dir / "report.json", "report")
    b = io.read_json(tmp_path / "report.json", "report")
    assert a["metrics"] == b["metrics"] and a["windows"] == b["windows"]


def test_variant_is_stamped(run_dir, tmp_path):
    assert main(["train", *SMALL, "--variant", "no-attention", "--out", str(tmp_path)]) == EXIT_OK
    a = io.read_json(run_dir / "report.json", "report")
    b = io.read_json(tmp_path / "report.json", "report")
    assert b["variant"] == "no-attention" and a["variant"] == "full"
    assert a["config_hash"] != b["config_hash"]


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preset": "exp1", "epochs": 0}))
    out = tmp_path / "run"
    assert main(["train", *SMALL, "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    saved = io.read_json(out / "config.json", "config")
    assert (saved["d"], saved["step"], saved["epochs"]) == (10, 2, 0)


def test_synth_then_ingest_then_train(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--n", "8", "--T", "1200", "--experiments", "6",
                 "--anomaly-fraction", "0.34", "--seed", "1"]) == EXIT_OK
    summary = tmp_path / "summary.json"
    assert main(["ingest", "--schema", str(data / "schema.json"), "--out", str(summary)]) == EXIT_OK
    body = io.read_json(summary, "dataset-summary")
    assert body["timestamps"] == 1200 and len(body["failed_experiments"]) == 2
    assert main(["train", "--data", str(data / "schema.json"), "--h", "2", "--epochs", "0",
                 "--out", str(tmp_path / "run")]) == EXIT_OK


def test_exit_code_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preset": "exp9"}))
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
    cfg.write_text(json.dumps({"colour": 1}))
    assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG


def test_exit_code_ingest(tmp_path):
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"sensor_columns": ["a"]}))
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    assert main(["ingest", "--schema", str(schema)]) == EXIT_INGEST
    assert main(["train", "--data", str(schema), "--out", str(tmp_path / "r")]) == EXIT_INGEST


def test_exit_code_runtime(tmp_path):
    assert main(["report", "--run", str(tmp_path / "nowhere")]) == EXIT_RUNTIME
    # 4 series give 4x4 images, too small for three pooling stages
    assert main(["train", "--synth-n", "4", "--synth-T", "1200", "--synth-experiments", "6",
                 "--epochs", "0", "--out", str(tmp_path / "r")]) == EXIT_RUNTIME


def test_stage_error_names_stage(tmp_path):
    from aclae_dt.pipeline import PipelineError

    cfg = RunConfig(synthetic=dict(n=4, T=1200, experiments=6, anomaly_fraction=0.34, seed=0, context_levels=0),
                    h=2, epochs=0, out_dir=str(tmp_path))
    with pytest.raises(PipelineError) as info:
        run_pipeline(cfg, print_table=False)
    assert info.value.stage == "model"
