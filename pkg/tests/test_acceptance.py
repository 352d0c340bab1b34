"""Acceptance criteria 1-9, each at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
prints one PASS/FAIL line per criterion. Criteria 6 and 7 train the full
model on the synthetic benchmark and take most of the runtime (criterion 7
trains ten models).
"""

import json
import math
import time

import numpy as np
import pytest

from aclae_dt import autodiff as ad
from aclae_dt.detection import detect, fit_thresholds
from aclae_dt.feature_images import build_feature_image, build_images
from aclae_dt.layers import ConvLSTMState, convlstm_step, init_convlstm, init_lstm, lstm_step
from aclae_dt.model import ConvLSTMAutoencoder, ModelSpec, loss
from aclae_dt.optim import Optimizer
from aclae_dt.pipeline import RunConfig, run_pipeline
from aclae_dt.synthetic import generate_synthetic
from aclae_dt.training import (
    GRID,
    HyperparamConfig,
    enumerate_grid,
    grid_config,
    grid_size,
    random_search,
    sample_trials,
    select_best,
    split_validation,
)
from conftest import ACCEPTANCE
from gradcheck import max_rel_error
from helpers import mini_spec, tiny_image_set
from transcription import convlstm_reference, lstm_reference

BENCH_SYNTH = {"n": 8, "T": 5000, "experiments": 12, "anomaly_fraction": 0.25, "seed": 0, "context_levels": 0}
VARIANT_SEEDS = range(5)


def record(num, passed, detail):
    ACCEPTANCE[num] = (bool(passed), detail)
    print(f"criterion {num}: {'PASS' if passed else 'FAIL'}  {detail}")
    assert passed, detail


# -- 1 ------------------------------------------------------------------------

def _op_cases(rng):
    x4 = rng.normal(size=(2, 2, 5, 5))
    k = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    away = lambda a: np.where(np.abs(a) < 0.05, 0.3, a)  # noqa: E731
    return {
        "add": (lambda a, c: a + c, [rng.normal(size=(3, 4)), rng.normal(size=4)]),
        "mul": (lambda a, c: a * c, [rng.normal(size=(3, 4)), rng.normal(size=(3, 1))]),
        "div": (lambda a, c: a / (c * c + 1.0), [rng.normal(size=(3, 4)), rng.normal(size=(3, 4))]),
        "matmul": (lambda a, c: a @ c, [rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 2))]),
        "sigmoid": (ad.sigmoid, [rng.normal(size=(4, 4))]),
        "tanh": (ad.tanh, [rng.normal(size=(4, 4))]),
        "relu": (ad.relu, [away(rng.normal(size=(4, 4)))]),
        "leaky_relu": (ad.leaky_relu, [away(rng.normal(size=(4, 4)))]),
        "elu": (ad.elu, [away(rng.normal(size=(4, 4)))]),
        "selu": (ad.selu, [away(rng.normal(size=(4, 4)))]),
        "softmax": (lambda a: ad.softmax(a, axis=-1), [rng.normal(size=(3, 5))]),
        "conv2d": (lambda a, kk, bb: ad.conv2d(a, kk, bb), [x4, k, b]),
        "conv2d stride 2": (lambda a, kk: ad.conv2d(a, kk, stride=2), [x4, k]),
        "maxpool2x2": (ad.maxpool2x2, [rng.normal(size=(2, 2, 5, 5))]),
        "upsample2x2": (lambda a: ad.upsample2x2(a, (5, 6)), [rng.normal(size=(2, 2, 3, 3))]),
        "concat": (lambda a, c: ad.concat([a, c], axis=1), [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))]),
        "mse": (lambda a, c: loss(a, c, "MSE"), [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))]),
        "mae": (lambda a, c: loss(a, c, "MAE"), [away(rng.normal(size=(3, 3))), np.zeros((3, 3))]),
        "rmse": (lambda a, c: loss(a, c, "RMSE"), [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))]),
    }


def _layer_cases(rng):
    cell = init_convlstm(rng, 2, 2, (4, 4))
    lcell = init_lstm(rng, 3, 4)
    x = rng.normal(size=(2, 2, 4, 4))
    h0 = rng.normal(size=(2, 2, 4, 4))

    def conv_cell(wx, wh, wc, b, xx, hh):
        cell.w_x, cell.w_h, cell.w_c, cell.b = wx, wh, wc, b
        st = convlstm_step(cell, xx, ConvLSTMState(hh, hh * 0.5))
        return ad.tsum(st.h * st.h) + ad.tsum(st.C)

    def dense_cell(wx, wh, b, xx, hh):
        lcell.w_x, lcell.w_h, lcell.b = wx, wh, b
        h, c = lstm_step(lcell, xx, (hh, hh * 0.5))
        return ad.tsum(h * h) + ad.tsum(c)

    return {
        "convlstm_step": (conv_cell, [t.data.copy() for t in cell.parameters()] + [x, h0]),
        "lstm_step": (dense_cell, [t.data.copy() for t in lcell.parameters()]
                      + [rng.normal(size=(2, 3)), rng.normal(size=(2, 4))]),
    }


def _set_param(model, name, tensor):
    owner, attr = name.split(".")
    p = model.params
    if owner == "att":
        setattr(p.attention, attr, tensor)
    elif owner == "head":
        setattr(p, "head_k" if attr == "k" else "head_b", tensor)
    else:
        cells = p.encoder if owner.startswith("enc") else p.decoder
        setattr(cells[int(owner[3:])], attr, tensor)


def test_criterion_1_gradient_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_op, worst_name = 0.0, ""
    for name, (fn, arrays) in {**_op_cases(rng), **_layer_cases(rng)}.items():
        out_shape = fn(*[ad.Tensor(a) for a in arrays]).shape
        w = rng.normal(size=out_shape)
        err = max_rel_error(lambda *t, fn=fn, w=w: ad.tsum(fn(*t) * ad.Tensor(w)), arrays)
        if err > worst_op:
            worst_op, worst_name = err, name

    model = ConvLSTMAutoencoder(ModelSpec(8, seq_len=2, encoder_filters=(2, 2, 1), decoder_filters=(1, 2, 2),
                                          attention_dim=4), seed=2)
    x = rng.uniform(size=(2, 1, 8, 8))
    names = [n for n, _ in model.params.named_parameters()]

    def build(*tensors):
        for n, t in zip(names, tensors):
            _set_param(model, n, t)
        return loss(model(x), x, "MSE")

    arrays = [p.data.copy() for p in model.parameters()]
    worst_model = max_rel_error(build, arrays)
    elapsed = time.perf_counter() - t0
    n_params = sum(a.size for a in arrays)
    record(1, worst_op < 1e-4 and worst_model < 1e-3 and elapsed < 120,
           f"ops max rel err {worst_op:.2e} ({worst_name}) < 1e-4; miniature model ({n_params} params, all "
           f"checked) {worst_model:.2e} < 1e-3; {elapsed:.1f}s < 120s")


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_feature_image_oracle():
    rng = np.random.default_rng(2)
    worst, sym_ok, scale_ok = 0.0, True, True
    for _ in range(1000):
        d, m = int(rng.integers(2, 61)), int(rng.integers(2, 13))
        w = rng.uniform(-1, 1, size=(d, m))
        got = build_feature_image(w)
        ref = np.zeros((m, m))
        for i in range(m):
            for j in range(m):
                acc = 0.0
                for t in range(d):
                    acc += w[t, i] * w[t, j]
                ref[i, j] = acc / d
        worst = max(worst, float(np.max(np.abs(got - ref))))
        sym_ok &= bool(np.array_equal(got, got.T))
        c = 2.0 ** int(rng.integers(-4, 5))  # powers of two keep scaling exact in binary
        scale_ok &= bool(np.array_equal(build_feature_image(c * w), c * c * got))
    series = rng.uniform(size=(6, 400))
    starts = np.arange(0, 370, 7)
    batched = build_images(series, starts, 30)
    batch_ok = all(np.array_equal(batched[k], build_feature_image(series[:, s:s + 30].T))
                   for k, s in enumerate(starts))
    record(2, worst <= 1e-12 and sym_ok and scale_ok and batch_ok,
           f"1000 windows, max abs diff vs double loop {worst:.1e} <= 1e-12; symmetry exact {sym_ok}; "
           f"scaling M(cX)=c^2 M(X) exact {scale_ok}; batched == single {batch_ok}")


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_threshold_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(500):
        k, m, z = int(rng.integers(2, 50)), int(rng.integers(1, 9)), float(rng.uniform(0, 5))
        errs = rng.exponential(size=(k, m, m))
        eps = fit_thresholds(errs, z).epsilon
        for i in range(m):
            for j in range(m):
                vals = [float(v) for v in errs[:, i, j]]
                mu = math.fsum(vals) / k
                sd = math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / k)
                worst = max(worst, abs(eps[i, j] - (mu + z * sd)))
    mono = 0
    for _ in range(100):
        m = int(rng.integers(2, 7))
        normal = rng.exponential(size=(int(rng.integers(2, 40)), m, m))
        test = rng.exponential(size=(50, m, m)) * rng.uniform(0.5, 3.0)
        zs = np.sort(rng.uniform(0, 5, size=4))
        flags = [detect(test, fit_thresholds(normal, z), [str(i) for i in range(m)]).flags for z in zs]
        mono += all(np.all(flags[a + 1] <= flags[a]) for a in range(3))
    record(3, worst <= 1e-12 and mono == 100,
           f"500 error sets, max |eps - (mu + z sigma)| {worst:.1e} <= 1e-12; z-monotone flag sets {mono}/100")


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_coupled_gate_fidelity():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        c_in, f = (int(v) for v in rng.integers(1, 4, size=2))
        hh, ww = (int(v) for v in rng.integers(3, 7, size=2))
        cell = init_convlstm(rng, c_in, f, (hh, ww))
        for t in cell.parameters():
            t.data = rng.normal(scale=0.7, size=t.shape)
        x, h0, c0 = rng.normal(size=(c_in, hh, ww)), rng.normal(size=(f, hh, ww)), rng.normal(size=(f, hh, ww))
        st = convlstm_step(cell, x, ConvLSTMState(ad.Tensor(h0), ad.Tensor(c0)))
        h_ref, c_ref = convlstm_reference(cell.named(), x, h0, c0, coupled=True)
        worst = max(worst, float(np.max(np.abs(st.h.data - h_ref))), float(np.max(np.abs(st.C.data - c_ref))))

        d, hid = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        lcell = init_lstm(rng, d, hid)
        for t in lcell.parameters():
            t.data = rng.normal(scale=0.7, size=t.shape)
        xv, hv, cv = rng.normal(size=d), rng.normal(size=hid), rng.normal(size=hid)
        h, c = lstm_step(lcell, xv, (ad.Tensor(hv), ad.Tensor(cv)))
        h_ref, c_ref = lstm_reference(lcell.named(), xv, hv, cv, coupled=True)
        worst = max(worst, float(np.max(np.abs(h.data - h_ref))), float(np.max(np.abs(c.data - c_ref))))
    record(4, worst <= 1e-12,
           f"100 ConvLSTM + 100 LSTM instances, max abs diff vs gate-by-gate transcription {worst:.1e} <= 1e-12")


# -- 5 ------------------------------------------------------------------------

def test_criterion_5_overfit_sanity():
    from aclae_dt.feature_images import build_feature_image_set
    from aclae_dt.preprocess import make_windows, minmax_normalize

    t0 = time.perf_counter()
    ts, _ = generate_synthetic(n=8, T=600, experiments=1, anomaly_fraction=0.0, seed=5)
    ts, _ = minmax_normalize(ts)
    data = build_feature_image_set(ts, make_windows(ts, 30, 5), 5)
    x = data.batch(np.arange(4)).data
    model = ConvLSTMAutoencoder(ModelSpec(8, seq_len=5), seed=5)
    opt = Optimizer("Adam", model.parameters(), 1e-3)
    with ad.no_grad():
        start = loss(model(x), x, "MSE").item()
    epochs, current = 0, start
    while epochs < 500 and current > start / 10:
        opt.zero_grad()
        batch_loss = loss(model(x), x, "MSE")
        batch_loss.backward()
        opt.clip_grad_norm(5.0)
        opt.step()
        epochs += 1
        with ad.no_grad():
            current = loss(model(x), x, "MSE").item()
    elapsed = time.perf_counter() - t0
    ratio = start / current
    record(5, ratio >= 10 and elapsed < 600,
           f"full attention model, 4 samples, Adam 1e-3 MSE: loss {start:.3e} -> {current:.3e} "
           f"({ratio:.1f}x >= 10x) in {epochs} epochs <= 500; {elapsed:.1f}s < 600s")


# -- 6 and 7 ------------------------------------------------------------------

_RUNS = {}


def benchmark_run(tmp_root, variant, seed):
    key = (variant, seed)
    if key not in _RUNS:
        cfg = RunConfig(synthetic=dict(BENCH_SYNTH), preset="exp2", h=5, z=3.0, epochs=100,
                        variant=variant, seed=seed, out_dir=str(tmp_root / f"{variant}-{seed}"))
        t0 = time.perf_counter()
        summary = run_pipeline(cfg, print_table=False)
        summary["wall_time"] = time.perf_counter() - t0
        _RUNS[key] = summary
    return _RUNS[key]


@pytest.fixture(scope="module")
def bench_root(tmp_path_factory):
    return tmp_path_factory.mktemp("benchmark")


def test_criterion_6_end_to_end_synthetic(bench_root):
    s = benchmark_run(bench_root, "full", 0)
    top3 = [name for _, name, _ in s["ranking"][:3]]
    hits = len(set(top3) & set(s["truth"]["perturbed_series"]))
    record(6, s["f1"] >= 0.90 and hits >= 2 and s["wall_time"] < 1800,
           f"n=8 T=5000 12 experiments (3 anomalous), 30/5, h=5, z=3, 100 epochs: F1 {s['f1']:.3f} >= 0.90 "
           f"(P {s['precision']:.3f}, R {s['recall']:.3f}); top-3 {top3} holds {hits}/3 of perturbed "
           f"{s['truth']['perturbed_series']} (need >= 2); {s['wall_time']:.0f}s < 1800s")


def test_criterion_7_variant_ordering(bench_root):
    full = [benchmark_run(bench_root, "full", s)["f1"] for s in VARIANT_SEEDS]
    plain = [benchmark_run(bench_root, "no-attention", s)["f1"] for s in VARIANT_SEEDS]
    mf, mp = float(np.mean(full)), float(np.mean(plain))
    record(7, mf >= mp - 0.02,
           f"mean F1 over seeds {list(VARIANT_SEEDS)}: full {mf:.3f} {np.round(full, 3).tolist()}, "
           f"no-attention {mp:.3f} {np.round(plain, 3).tolist()}; need full >= no-attention - 0.02")


# -- 8 ------------------------------------------------------------------------

VOLATILE = ("out_dir", "train_time")  # output location and wall-clock time


def _stable(path):
    """Artifact content with the volatile fields removed; checkpoints stay raw bytes."""
    if path.name == "checkpoint.ckpt" or path.suffix != ".json":
        return path.read_bytes()
    text = path.read_text()
    first, rest = text.partition("\n")[::2] if text.startswith("#") else ("", text)
    body = json.loads(rest)

    def strip(obj):
        if isinstance(obj, dict):
            return {k: strip(v) for k, v in obj.items() if k not in VOLATILE}
        if isinstance(obj, list):
            return [strip(v) for v in obj]
        return obj
    return first, strip(body)


def test_criterion_8_determinism(tmp_path):
    from aclae_dt.cli import main

    small = ["--synth-n", "8", "--synth-T", "1200", "--synth-experiments", "6",
             "--synth-anomaly-fraction", "0.34", "--h", "2", "--seed", "8"]
    commands = {
        "synth": lambda out: ["synth", "--out", str(out), "--T", "600", "--experiments", "4", "--seed", "8"],
        "train": lambda out: ["train", *small, "--epochs", "2", "--out", str(out)],
        "hpo": lambda out: ["hpo", *small, "--epochs", "1", "--hpo-trials", "2", "--hpo-epochs", "1",
                            "--out", str(out)],
        "detect": lambda out: ["detect", "--run", str(tmp_path / "train-0"), "--out", str(out)],
    }
    mismatched, compared, ckpts = [], 0, 0
    for name, argv in commands.items():
        outs = [tmp_path / f"{name}-{k}" for k in (0, 1)]
        for out in outs:
            assert main(argv(out)) == 0
        files = sorted(p.name for p in outs[0].iterdir())
        assert files == sorted(p.name for p in outs[1].iterdir())
        for f in files:
            compared += 1
            ckpts += f == "checkpoint.ckpt"
            if _stable(outs[0] / f) != _stable(outs[1] / f):
                mismatched.append(f"{name}/{f}")
    record(8, not mismatched and ckpts == 2,
           f"synth, train, hpo and detect each rerun with identical config+seed: {compared} artifacts compared, "
           f"{ckpts} checkpoints byte-identical, all others identical apart from {', '.join(VOLATILE)}"
           if not mismatched else f"differing artifacts: {mismatched}")


# -- 9 ------------------------------------------------------------------------

def test_criterion_9_hpo_contract():
    cells = enumerate_grid()
    expected = math.prod(len(v) for v in GRID.values())
    grid_ok = grid_size() == expected == 1200 and len(set(cells)) == 1200
    grid_ok &= all(grid_config(i) == c for i, c in enumerate(cells))
    grid_ok &= {c.activation for c in cells} == {"relu", "leaky_relu", "elu", "selu"}
    draws = sample_trials(1200, seed=9)
    exhaustive = sorted(draws) == list(range(1200))
    data = tiny_image_set(seed=9)
    tr, va = split_validation(data)
    res = random_search(mini_spec(), tr, va, trials=4, budget_epochs=1, seed=9)
    vals = [t.val_loss for t in res.trials]
    finite = [v for v in vals if math.isfinite(v)]
    argmin_ok = res.best_trial == int(np.argmin(np.where(np.isfinite(vals), vals, np.inf)))
    argmin_ok &= res.best_trial == select_best(vals) and vals[res.best_trial] == min(finite)
    argmin_ok &= isinstance(res.best, HyperparamConfig) and res.best == res.trials[res.best_trial].config
    record(9, grid_ok and exhaustive and argmin_ok,
           f"grid 4x5x5x4x3 = {grid_size()} cells, distinct and index-consistent {grid_ok}; trials=1200 draws "
           f"every cell exactly once {exhaustive}; best trial {res.best_trial} matches recomputed argmin {argmin_ok}")
