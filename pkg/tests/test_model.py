import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aclae_dt import autodiff as ad
from aclae_dt.model import ConvLSTMAutoencoder, ForwardTrace, ModelSpec, loss
from gradcheck import max_rel_error

MINI = dict(encoder_filters=(2, 2, 1), decoder_filters=(1, 2, 2), attention_dim=3)


def mini_model(side=8, h=2, seed=0, **kw):
    return ConvLSTMAutoencoder(ModelSpec(side, seq_len=h, **dict(MINI, **kw)), seed=seed)


@settings(max_examples=12, deadline=None)
@given(side=st.integers(8, 64), h=st.sampled_from([1, 3, 5]))
def test_output_shape_equals_input(side, h):
    model = mini_model(side, h)
    x = np.random.default_rng(side).uniform(size=(h, 1, side, side))
    with ad.no_grad():
        assert model(x).shape == x.shape


@pytest.mark.parametrize("variant", ["full", "no-attention", "shallow"])
def test_variants_build_and_run(rng, variant):
    spec = ModelSpec.for_variant(variant, 9, seq_len=2)
    model = ConvLSTMAutoencoder(spec, seed=1)
    x = rng.uniform(size=(2, 2, 1, 9, 9))
    with ad.no_grad():
        assert model(x).shape == x.shape
    names = [n for n, _ in model.params.named_parameters()]
    assert any(n.startswith("att.") for n in names) == (variant != "no-attention")
    assert len(spec.encoder_filters) == (2 if variant == "shallow" else 3)


def test_image_too_small():
    with pytest.raises(ValueError):
        ConvLSTMAutoencoder(ModelSpec(7))


def test_last_only_output(rng):
    model = mini_model(8, 3, output="last")
    x = rng.uniform(size=(3, 1, 8, 8))
    with ad.no_grad():
        y = model(x)
        assert y.shape == (1, 1, 8, 8)
        assert model.target(x).shape == y.shape


def test_attention_weights_sum_to_one_each_step(rng):
    model = mini_model(8, 4)
    trace = ForwardTrace()
    with ad.no_grad():
        model(rng.uniform(size=(2, 4, 1, 8, 8)), trace)
    assert len(trace.attention_weights) == 4
    for w in trace.attention_weights:
        assert w.shape == (2, 4)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)


def test_batched_forward_matches_single(rng):
    model = mini_model(8, 2)
    x = rng.uniform(size=(3, 2, 1, 8, 8))
    with ad.no_grad():
        batch = model(x).data
        for k in range(3):
            np.testing.assert_allclose(batch[k], model(x[k]).data, rtol=0, atol=1e-12)


def test_same_seed_same_parameters():
    a, b = mini_model(seed=5), mini_model(seed=5)
    for (na, pa), (nb, pb) in zip(a.params.named_parameters(), b.params.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_miniature_model_gradient(rng):
    model = mini_model(8, 2, seed=3)
    x = rng.uniform(size=(2, 1, 8, 8))
    params = model.parameters()

    def build(*tensors):
        for slot, t in zip(model.params.named_parameters(), tensors):
            _set(model, slot[0], t)
        return loss(model(x), x, "MSE")

    arrays = [p.data.copy() for p in params]
    assert max_rel_error(build, arrays, probes=6) < 1e-3


def _set(model, name, tensor):
    owner, attr = name.split(".")
    p = model.params
    if owner == "att":
        setattr(p.attention, attr, tensor)
    elif owner == "head":
        setattr(p, "head_k" if attr == "k" else "head_b", tensor)
    else:
        cells = p.encoder if owner.startswith("enc") else p.decoder
        setattr(cells[int(owner[3:])], attr, tensor)


@pytest.mark.parametrize("kind", ["MAE", "MSE", "RMSE"])
def test_losses_closed_form(kind):
    y_hat, y = np.array([1.0, 2.0, 4.0]), np.array([0.0, 2.0, 2.0])
    expected = {"MAE": 1.0, "MSE": 5.0 / 3, "RMSE": np.sqrt(5.0 / 3)}[kind]
    assert loss(y_hat, y, kind).item() == pytest.approx(expected, rel=1e-15)


def test_loss_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        loss(np.zeros(3), np.zeros(4))


def test_single_step_decreases_sample_loss():
    failures = 0
    for seed in range(20):
        model = mini_model(8, 2, seed=seed)
        x = np.random.default_rng(100 + seed).uniform(size=(2, 1, 8, 8))
        before = loss(model(x), x, "MSE")
        before.backward()
        for p in model.parameters():
            p.data = p.data - 1e-4 * p.grad
            p.grad = None
        with ad.no_grad():
            after = loss(model(x), x, "MSE").item()
        failures += not after < before.item()
    assert failures <= 1
