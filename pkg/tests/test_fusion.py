import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmdfr import MODALITIES
from mmdfr.errors import DataError, DimensionError, FormatError
from mmdfr.fusion import (AutoEncoder, RangeNormalizer, SAEConfig, activation, concat_features,
                          fit_fusion, flip_average, flip_concat, l2_normalize, load_sae, sae_encode,
                          sae_lr, sae_train_layerwise, save_sae, split_features)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_l2_normalize():
    assert np.allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])
    u = np.array([0.0, 1.0, 0.0])
    assert np.array_equal(l2_normalize(u), u)
    v = np.random.default_rng(0).normal(size=(20, 512)).astype(np.float32)
    assert np.abs(np.linalg.norm(l2_normalize(v), axis=1) - 1).max() < 1e-6
    with pytest.raises(DataError):
        l2_normalize(np.zeros(4))


def test_flip_combinations():
    f = np.array([1.0, 3.0])
    assert np.array_equal(flip_average(f, f), f)
    assert np.array_equal(flip_average(f, -f), [0, 0])
    assert np.array_equal(flip_average(f, np.array([3.0, 5.0])), [2, 4])
    a, b = np.arange(512.0), -np.arange(512.0)
    c = flip_concat(a, b)
    assert c.shape == (1024,) and np.array_equal(c[:512], a)
    back = split_features(c, 2)
    assert np.array_equal(back[0], a) and np.array_equal(back[1], b)
    with pytest.raises(DimensionError):
        flip_average(np.zeros(3), np.zeros(4))
    with pytest.raises(DimensionError):
        flip_concat(np.zeros(3), np.zeros(4))


@given(arrays(np.float64, (8, 16), elements=finite))
@settings(max_examples=30, deadline=None)
def test_concat_then_split_is_identity(blocks):
    x = concat_features(list(blocks))
    assert x.shape == (128,)
    for i, part in enumerate(split_features(x, 8)):
        assert np.array_equal(part, blocks[i])


def test_concat_contract():
    vecs = [np.full(512, k, np.float32) for k in range(8)]
    assert concat_features(vecs).shape == (4096,)
    tagged = list(zip(MODALITIES, vecs))
    assert np.array_equal(concat_features(tagged), concat_features(vecs))
    swapped = [tagged[1], tagged[0]] + tagged[2:]
    with pytest.raises(DataError):
        concat_features(swapped)
    with pytest.raises(DataError):
        concat_features(vecs[:7])
    with pytest.raises(DataError):
        concat_features(vecs[:2], tags=("H2", "H1"))
    assert concat_features(vecs[:2], tags=("H1", "P3")).shape == (1024,)


def test_range_normalizer():
    train = np.array([[0.0, -2.0], [1.0, 2.0], [0.5, 0.0]])
    sig = RangeNormalizer.fit(train, "sigmoid")
    out = sig.apply(train)
    assert np.allclose(out.min(axis=0), 0) and np.allclose(out.max(axis=0), 1)
    tanh = RangeNormalizer.fit(train, "tanh")
    assert np.allclose(tanh.apply(train).min(axis=0), -1)
    assert np.allclose(tanh.apply(train).max(axis=0), 1)
    assert sig.apply(np.array([[5.0, -9.0]])).tolist() == [[1.0, 0.0]]
    with pytest.warns(UserWarning, match="constant"):
        const = RangeNormalizer.fit(np.array([[1.0, 3.0], [1.0, 4.0]]))
    assert const.apply(np.array([[1.0, 3.5]]))[0, 0] == 0.5
    with pytest.raises(DataError):
        RangeNormalizer.fit(np.zeros((0, 3)))


@given(arrays(np.float64, (5, 3), elements=finite), arrays(np.float64, (4, 3), elements=finite),
       st.sampled_from(["sigmoid", "tanh"]))
@settings(max_examples=40, deadline=None)
def test_range_normalizer_bounds(train, test, kind):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        norm = RangeNormalizer.fit(train, kind)
    lo, hi = (0, 1) if kind == "sigmoid" else (-1, 1)
    out = norm.apply(test)
    assert out.min() >= lo and out.max() <= hi
    own = norm.apply(train)
    varying = norm.maximum > norm.minimum
    assert np.allclose(own.min(axis=0)[varying], lo, atol=1e-6)
    assert np.allclose(own.max(axis=0)[varying], hi, atol=1e-6)


def test_activations():
    assert activation("sigmoid", 0.0) == 0.5 and activation("tanh", 0.0) == 0.0
    z = np.random.default_rng(0).normal(scale=3, size=1000)
    s, t = activation("sigmoid", z), activation("tanh", z)
    assert s.min() > 0 and s.max() < 1 and t.min() > -1 and t.max() < 1
    assert np.abs(t - (2 * activation("sigmoid", 2 * z) - 1)).max() < 1e-7
    with pytest.raises(ValueError):
        activation("relu", z)


def test_lr_decay_log_linear():
    cfg = SAEConfig()
    lrs = [sae_lr(e, cfg) for e in range(cfg.epochs)]
    assert lrs[0] == pytest.approx(0.01) and lrs[-1] == pytest.approx(1e-5)
    ratios = np.array(lrs[1:]) / np.array(lrs[:-1])
    assert np.allclose(ratios, ratios[0])


def clustered(n=200, d=48, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.random((5, d))
    x = centers[rng.integers(0, 5, n)] + rng.normal(0, 0.05, (n, d))
    return RangeNormalizer.fit(x).apply(x)


@pytest.mark.parametrize("kind", ["sigmoid", "tanh"])
def test_layerwise_training_reduces_loss(kind):
    x = clustered()
    if kind == "tanh":
        x = 2 * x - 1
    model = sae_train_layerwise(x, SAEConfig(widths=(32, 24, 16), kind=kind, epochs=8, lr_start=0.05,
                                             lr_end=1e-3, batch_size=16))
    assert model.widths == (32, 24, 16)
    for losses in model.history:
        assert losses[-1] < losses[0]


def test_full_widths():
    x = np.random.default_rng(0).random((4, 4096)).astype(np.float32)
    model = sae_train_layerwise(x, SAEConfig(epochs=1, batch_size=4))
    assert model.widths == (2048, 1024, 512)
    assert sae_encode(model, x).shape == (4, 512)


def test_zero_epochs_keeps_initialization():
    x = clustered(n=10, d=12)
    cfg = SAEConfig(widths=(8, 6, 4), epochs=0)
    model = sae_train_layerwise(x, cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    first = AutoEncoder.init(12, 8, "sigmoid", True, rng)
    for key in first.params:
        assert np.array_equal(first.params[key], model.layers[0].params[key])


def test_bad_widths():
    with pytest.raises(ValueError):
        sae_train_layerwise(np.zeros((3, 8)), SAEConfig(widths=(8, 8, 4)))
    with pytest.raises(ValueError):
        sae_train_layerwise(np.zeros((3, 8)), SAEConfig(widths=(6, 4)))


def test_signature_is_pre_nonlinearity_readout():
    x = clustered()
    model = sae_train_layerwise(x, SAEConfig(widths=(32, 24, 16), epochs=2))
    for layer in model.layers:
        for k in ("We", "Wd"):
            layer.params[k] *= 20
    sig = sae_encode(model, x)
    assert sig.shape == (200, 16)
    assert sig.min() < 0 or sig.max() > 1
    for layer in model.layers:
        for v in layer.params.values():
            v[:] = 0
    assert np.all(sae_encode(model, x) == 0)
    with pytest.raises(DimensionError):
        sae_encode(model, x[:, :10])


@given(alpha=st.floats(-2, 2))
@settings(max_examples=20, deadline=None)
def test_final_stage_affine(alpha):
    rng = np.random.default_rng(5)
    ae = AutoEncoder.init(6, 3, "sigmoid", False, rng, dtype=np.float64)
    ae.params["be"] = rng.normal(size=3)
    u, v = rng.random(6), rng.random(6)
    lhs = ae.preactivation(alpha * u + (1 - alpha) * v)
    rhs = alpha * ae.preactivation(u) + (1 - alpha) * ae.preactivation(v)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_training_is_reproducible():
    x = clustered()
    cfg = SAEConfig(widths=(32, 24, 16), epochs=3)
    a, b = sae_train_layerwise(x, cfg), sae_train_layerwise(x, cfg)
    for la, lb in zip(a.layers, b.layers):
        for k in la.params:
            assert np.array_equal(la.params[k], lb.params[k])
    assert np.array_equal(sae_encode(a, x), sae_encode(a, x))


def test_sae_checkpoint_round_trip(tmp_path):
    raw = np.random.default_rng(0).normal(size=(40, 24)).astype(np.float32)
    model = fit_fusion(raw, SAEConfig(widths=(16, 12, 8), epochs=2), mask=("H1", "P2", "P5"))
    p = tmp_path / "m.mmsa"
    save_sae(model, p)
    back = load_sae(p)
    assert back.mask == ("H1", "P2", "P5") and back.kind == "sigmoid"
    assert np.array_equal(back.signature(raw), model.signature(raw))
    save_sae(back, tmp_path / "again.mmsa")
    assert (tmp_path / "again.mmsa").read_bytes() == p.read_bytes()

    data = p.read_bytes()
    (tmp_path / "bad.mmsa").write_bytes(b"MMNN" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        load_sae(tmp_path / "bad.mmsa")
    (tmp_path / "old.mmsa").write_bytes(data[:4] + (7).to_bytes(4, "little") + data[8:])
    with pytest.raises(FormatError, match="version"):
        load_sae(tmp_path / "old.mmsa")
    (tmp_path / "cut.mmsa").write_bytes(data[:-10])
    with pytest.raises(FormatError):
        load_sae(tmp_path / "cut.mmsa")
