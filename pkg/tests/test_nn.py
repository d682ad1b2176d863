import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdfr.errors import BuildError, DimensionError, DivergenceError, FormatError, ParseError
from mmdfr.nn import layers as L
from mmdfr.nn.checkpoint import from_bytes, load_network, save_network, to_bytes
from mmdfr.nn.gradcheck import KINDS, gradient_check
from mmdfr.nn.losses import select_triplets, triplet_loss
from mmdfr.nn.network import build_network
from mmdfr.nn.spec import (VARIANTS, format_netspec, make_ablation_variant, parse_netspec,
                           shipped_spec, trace_shapes)
from mmdfr.nn.train import (TrainConfig, finetune_stage_triplet, lr_at_epoch, sgd_step,
                            train_stage_softmax)

from tables import NN1_ROWS, NN2_ROWS, audit


def toy_dataset(n_classes=4, per_class=12, seed=0, shape=(32, 24)):
    """Class k: a bright square at a class-specific position plus noise."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for k in range(n_classes):
        for _ in range(per_class):
            img = rng.random(shape) * 0.2
            r, c = 4 + 6 * (k % 3), 3 + 8 * (k // 3)
            img[r:r + 6, c:c + 6] += 0.7
            xs.append(img)
            ys.append(k)
    return np.array(xs, np.float32), np.array(ys)


# -- specs --------------------------------------------------------------------------

@pytest.mark.parametrize("name,rows", [("nn1", NN1_ROWS), ("nn2", NN2_ROWS)])
def test_shipped_specs_match_reference_tables(name, rows):
    assert audit(shipped_spec(name), rows) == []


def test_nn1_trace_examples():
    trace = {r.layer.name: r for r in trace_shapes(shipped_spec("nn1"))}
    assert trace["Conv11"].out_shape[1:] == (163, 118)
    assert trace["Pool1"].out_shape[1:] == (80, 58)
    assert trace["Pool4"].out_shape[1:] == (10, 7)
    assert trace["Pool5"].out_shape == (256, 6, 4)
    assert trace["Dropout"].out_shape == (6144,)
    assert trace["Fc7"].out_shape == (9000,)
    assert trace["Pool3"].out_shape[1:] == (20, 14)


def test_spec_text_round_trip():
    for name in ("nn1", "nn2", "tiny", "tiny-patch"):
        spec = shipped_spec(name)
        assert parse_netspec(format_netspec(spec)) == spec


def test_build_error_names_layer():
    text = format_netspec(shipped_spec("nn1")).replace("Conv21 conv 80 58", "Conv21 conv 81 58")
    with pytest.raises(BuildError, match="Conv21"):
        trace_shapes(parse_netspec(text))


def test_spec_parse_errors():
    with pytest.raises(ParseError, match="line 2"):
        parse_netspec("# header\nConv11 conv 32 24 8 3 1\n")
    with pytest.raises(BuildError):
        parse_netspec("P maxpool 8 8 4 2 2 0 no\n")
    with pytest.raises(BuildError):
        shipped_spec("nn9")


def test_with_classes():
    spec = shipped_spec("tiny").with_classes(3)
    assert spec.class_count == 3 and spec.feature_dim == 64
    trace_shapes(spec)


def test_ablation_variants():
    base = shipped_spec("nn1")
    assert base.variant_flags == {"reluAfterLastConv": False, "reluAfterFc6": False, "lastPoolKind": "mean"}
    v1 = make_ablation_variant(base, "NN1+C52R")
    assert v1.variant_flags == {"reluAfterLastConv": True, "reluAfterFc6": False, "lastPoolKind": "max"}
    v2 = make_ablation_variant(base, "NN1+C52R+Fc6R")
    assert v2.variant_flags == {"reluAfterLastConv": True, "reluAfterFc6": True, "lastPoolKind": "max"}
    assert make_ablation_variant(base, "NN1") == base
    with pytest.raises(ValueError):
        make_ablation_variant(base, "NN3")
    with pytest.raises(BuildError):
        make_ablation_variant(v1, "NN1")


# -- layers ---------------------------------------------------------------------------

def test_conv_extent_and_identity_kernel():
    x = np.random.default_rng(0).random((1, 1, 165, 120))
    w = np.zeros((1, 1, 3, 3))
    out, _ = L.conv2d_forward(x, w, np.zeros(1))
    assert out.shape == (1, 1, 163, 118)
    w[0, 0, 1, 1] = 1.0
    same, _ = L.conv2d_forward(x[:, :, :9, :7], w, np.zeros(1), pad=1)
    assert np.array_equal(same, x[:, :, :9, :7])


def test_conv_is_cross_correlation():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 0, 0] = 1.0
    out, _ = L.conv2d_forward(x, w, np.array([0.5]))
    assert out[0, 0, 0, 0] == x[0, 0, 0, 0] + 0.5


def test_conv_dimension_errors():
    with pytest.raises(DimensionError):
        L.conv2d_forward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(DimensionError):
        L.conv2d_forward(np.zeros((1, 2, 5, 5)), np.zeros((1, 1, 3, 3)), np.zeros(1))


def test_pool_window():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])[None, None]
    assert L.pool2d_forward(x, "max")[0].item() == 4.0
    assert L.pool2d_forward(x, "mean")[0].item() == 2.5
    assert L.pool2d_forward(np.zeros((1, 1, 38, 27)), "max", pad=1)[0].shape[2:] == (20, 14)
    assert L.pool2d_forward(np.zeros((1, 256, 10, 7)), "mean", pad=1)[0].reshape(-1).size == 6144


def test_pool_padding_conventions():
    x = -np.ones((1, 1, 3, 3))
    mx, _ = L.pool2d_forward(x, "max", pad=1)
    assert np.all(mx == -1)  # padding never wins the max
    mean, _ = L.pool2d_forward(np.ones((1, 1, 3, 3)), "mean", pad=1)
    assert mean[0, 0, 0, 0] == 0.25  # one real cell over a 2x2 divisor


def test_relu_conventions():
    y, mask = L.relu_forward(np.array([-3.0, 0.0, 2.0]))
    assert list(y) == [0, 0, 2]
    assert list(L.relu_backward(np.ones(3), mask)) == [0, 0, 1]


def test_fc_identity_and_shapes():
    x = np.random.default_rng(0).random((2, 5))
    assert np.array_equal(L.fc_forward(x, np.eye(5), np.zeros(5))[0], x)
    y, _ = L.fc_forward(np.zeros((1, 6144)), np.zeros((6144, 512)), np.zeros(512))
    assert y.shape == (1, 512)
    with pytest.raises(DimensionError):
        L.fc_forward(np.zeros((1, 4)), np.zeros((5, 2)), np.zeros(2))


@given(alpha=st.floats(-4, 4))
@settings(max_examples=25, deadline=None)
def test_fc6_affine(alpha):
    rng = np.random.default_rng(2)
    w, b, v = rng.normal(size=(8, 3)), rng.normal(size=3), rng.normal(size=(1, 8))
    lhs = L.fc_forward(alpha * v, w, b)[0]
    rhs = alpha * L.fc_forward(v, w, b)[0] + (1 - alpha) * b
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_dropout_modes_and_statistics():
    x = np.random.default_rng(0).random((1000, 1000))
    assert L.dropout_forward(x, 0.4, False, None)[0] is x
    assert L.dropout_forward(x, 0.0, True, np.random.default_rng(1))[0] is x
    y, _ = L.dropout_forward(x, 0.4, True, np.random.default_rng(1))
    assert abs((y == 0).mean() - 0.4) < 0.005
    assert abs(y.mean() / x.mean() - 1) < 0.01
    with pytest.raises(ValueError):
        L.dropout_forward(x, 1.0, True, np.random.default_rng(0))


def test_softmax_loss_values():
    loss, _ = L.softmax_cross_entropy(np.zeros(9000), 3)
    assert loss == pytest.approx(math.log(9000))
    assert round(loss, 4) == 9.1050
    logits = np.zeros(10)
    logits[2] = 50
    assert L.softmax_cross_entropy(logits, 2)[0] < 1e-20
    with pytest.raises(ValueError):
        L.softmax_cross_entropy(np.zeros(4), 4)


@given(shift=st.floats(-100, 100))
@settings(max_examples=25, deadline=None)
def test_softmax_shift_invariance(shift):
    z = np.random.default_rng(3).normal(size=(3, 7))
    a = L.softmax_cross_entropy(z, [0, 3, 6])[0]
    b = L.softmax_cross_entropy(z + shift, [0, 3, 6])[0]
    assert abs(a - b) < 1e-6


def test_single_class_softmax_is_degenerate():
    loss, grad = L.softmax_cross_entropy(np.array([[3.2], [-1.0]]), [0, 0])
    assert loss == 0 and np.all(grad == 0)


def test_triplet_loss_cases():
    a = np.array([1.0, 0, 0])
    n = np.array([0, 1.0, 0])
    assert triplet_loss(a, a, n)[0] == 0
    assert triplet_loss(a, a, a)[0] == pytest.approx(0.2)
    _, grads = triplet_loss(a, a, n)
    assert all(np.all(g == 0) for g in grads)


def test_select_triplets():
    feats = np.eye(3)
    assert len(select_triplets(feats, [0, 1, 2])) == 0
    # two tight clusters far apart: nothing is active
    rng = np.random.default_rng(0)
    c = np.vstack([rng.normal(0, 0.01, (3, 4)) + [1, 0, 0, 0], rng.normal(0, 0.01, (3, 4)) + [0, 1, 0, 0]])
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    labels = [0, 0, 0, 1, 1, 1]
    trip = select_triplets(c, labels)
    assert len(trip) == 12
    loss, _ = triplet_loss(c[trip[:, 0]], c[trip[:, 1]], c[trip[:, 2]])
    assert np.all(loss == 0)


def test_select_triplets_picks_semi_hard():
    # 1-D points, squared distances from the anchor at 0: p 0.25, negatives 0.01, 0.36, 1.0
    x = np.array([[0.0], [0.5], [0.1], [0.6], [1.0]])
    trip = select_triplets(x, [0, 0, 1, 2, 3], margin=0.2)
    row = trip[(trip[:, 0] == 0) & (trip[:, 1] == 1)]
    assert row.tolist() == [[0, 1, 3]]
    # without a semi-hard candidate the hardest negative is used
    trip = select_triplets(x[[0, 1, 2, 4]], [0, 0, 1, 3], margin=0.05)
    row = trip[(trip[:, 0] == 0) & (trip[:, 1] == 1)]
    assert row.tolist() == [[0, 1, 2]]


# -- gradients --------------------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_gradients_double_precision(kind):
    assert gradient_check(kind, trials=3) < 1e-6


def test_meanpool_gradient_is_exact():
    # linear map: a wide step has no truncation error and little roundoff
    assert gradient_check("meanpool", trials=2, h=1e-2) < 1e-10


@pytest.mark.parametrize("kind", ["conv", "fc", "meanpool", "softmax", "triplet"])
def test_gradients_single_precision(kind):
    assert gradient_check(kind, trials=2, h=1e-2, dtype=np.float32) < 1e-3


def test_whole_network_gradient():
    spec = parse_netspec("""\
C1 conv 6 5 2 3 1 1 yes
P1 maxpool 6 5 - 2 2 1 no
C2 conv 4 3 3 3 1 1 no
P2 meanpool 4 3 - 2 2 1 no
D dropout 18 1 - - - - -
F6 fc 4 1 - - - - no
F7 fc 3 1 - - - - no
S softmax 3 1 - - - - -
""")
    net = build_network(spec, seed=1, dtype=np.float64)
    rng = np.random.default_rng(0)
    x = net.prepare(rng.random((2, 6, 5)))
    y = np.array([0, 2])

    def loss():
        return L.softmax_cross_entropy(net.forward(x), y)[0]

    _, d = L.softmax_cross_entropy(net.forward(x), y)
    grads, _ = net.backward(d)
    from mmdfr.nn.gradcheck import numeric_grad, rel_error

    for name, w in net.params.items():
        assert rel_error(grads[name], numeric_grad(loss, w, 1e-5)) < 1e-6, name


# -- network -------------------------------------------------------------------------

def test_extract_feature_dense_and_deterministic():
    net = build_network(shipped_spec("tiny"), seed=0)
    img = np.random.default_rng(0).random((32, 24)).astype(np.float32)
    f1, f2 = net.extract_feature(img), net.extract_feature(img)
    assert f1.shape == (64,)
    assert np.array_equal(f1, f2)
    assert (f1 < 0).any()
    relu = build_network(make_ablation_variant(shipped_spec("tiny"), "NN1+C52R+Fc6R"), seed=0)
    assert (relu.extract_feature(img) >= 0).all()
    with pytest.raises(DimensionError):
        net.extract_feature(np.zeros((30, 24)))


def test_full_size_feature_dim():
    net = build_network(shipped_spec("nn1"), seed=0)
    assert net.feature_dim == 512
    assert net.params["Fc6.W"].shape == (6144, 512)
    assert net.params["Fc7.W"].shape == (512, 9000)


def test_dropout_only_in_training_mode():
    net = build_network(shipped_spec("tiny"), seed=0)
    x = net.prepare(np.random.default_rng(0).random((4, 32, 24)))
    a = net.eval().forward(x, stop="features")
    b = net.train().forward(x, stop="features")
    assert np.array_equal(a, net.eval().forward(x, stop="features"))
    assert not np.array_equal(a, b)


# -- training ------------------------------------------------------------------------

def test_lr_schedule():
    cfg = TrainConfig()
    assert [lr_at_epoch(e, cfg) for e in (0, 9, 10, 19, 40)] == [0.01, 0.01, 0.001, 0.001, 0.001]
    with pytest.raises(ValueError):
        TrainConfig(triplet_margin=0)


def test_sgd_step():
    w = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, 0.25])}
    sgd_step(w, g, {}, 0.1, momentum=0.0, weight_decay=0.0)
    assert np.allclose(w["w"], [0.95, -2.025])
    w0 = {"w": np.array([1.0, -2.0])}
    sgd_step(w0, {"w": np.zeros(2)}, {}, 0.1, momentum=0.0, weight_decay=0.0)
    assert np.array_equal(w0["w"], [1.0, -2.0])
    # two momentum steps on a fixed gradient
    w = {"w": np.array([1.0])}
    vel = {}
    for _ in range(2):
        sgd_step(w, {"w": np.array([2.0])}, vel, 0.1, momentum=0.9, weight_decay=0.0)
    v1 = -0.2
    v2 = 0.9 * v1 - 0.2
    assert abs(w["w"][0] - (1.0 + v1 + v2)) < 1e-12
    with pytest.raises(ValueError):
        sgd_step(w, {"w": np.zeros(3)}, {}, 0.1)


def test_softmax_training_reduces_loss_and_is_reproducible():
    x, y = toy_dataset()
    cfg = TrainConfig(batch_size=16, epochs_stage1=6, lr_step_epochs=4)
    runs = []
    for _ in range(2):
        net = build_network(shipped_spec("tiny").with_classes(4), seed=3)
        net, log = train_stage_softmax(net, x, y, cfg)
        runs.append((net, log))
    log = runs[0][1]
    assert log.epoch_loss[-1] < log.epoch_loss[0]
    assert log.epoch_lr == [0.01] * 4 + [0.001] * 2
    for k in runs[0][0].params:
        assert np.array_equal(runs[0][0].params[k], runs[1][0].params[k])


def test_single_class_training_changes_nothing_but_decay():
    x, _ = toy_dataset(n_classes=1, per_class=8)
    net = build_network(shipped_spec("tiny").with_classes(1), seed=0)
    before = {k: v.copy() for k, v in net.params.items()}
    _, log = train_stage_softmax(net, x, np.zeros(8, int),
                                 TrainConfig(epochs_stage1=2, weight_decay=0.0, batch_size=4))
    assert all(v == 0 for v in log.epoch_loss)
    for k in before:
        assert np.array_equal(before[k], net.params[k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    x, y = toy_dataset(n_classes=2, per_class=4)
    net = build_network(shipped_spec("tiny").with_classes(2), seed=0)
    net.params["Fc7.W"][:] = np.inf
    with pytest.raises(DivergenceError, match="epoch 0"):
        train_stage_softmax(net, x, y, TrainConfig(epochs_stage1=1))


def test_triplet_stage():
    x, y = toy_dataset(n_classes=4, per_class=8)
    cfg = TrainConfig(batch_size=16, epochs_stage1=3)
    net = build_network(shipped_spec("tiny").with_classes(4), seed=0)
    net, _ = train_stage_softmax(net, x, y, cfg)
    fc7 = net.params["Fc7.W"].copy()
    conv = net.params["Conv11.W"].copy()
    net, log = finetune_stage_triplet(net, x, y, cfg)
    assert len(log.active_fraction) == 2
    assert log.epoch_lr == [0.001, 0.001]
    assert np.array_equal(net.params["Fc7.W"], fc7)
    assert not np.array_equal(net.params["Conv11.W"], conv)


def test_active_triplet_fraction_falls_on_synthetic_faces():
    from mmdfr.benchmark import BenchmarkConfig, modality_images, split_indices, synth_config, train_modality_net
    from mmdfr.data.synth import synth_generate
    from mmdfr.geometry import make_face_mesh

    cfg = BenchmarkConfig(seed=0)
    cfg.train.epochs_stage1 = 6
    images, records = synth_generate(synth_config(cfg))
    subjects = sorted({r.subject for r in records})
    labels = np.array([subjects.index(r.subject) for r in records])
    train, _ = split_indices(labels, cfg.train_per_subject)
    inputs, _ = modality_images([images[i] for i in train], [records[i].landmarks for i in train],
                                ("H1",), make_face_mesh())
    _, logs = train_modality_net(shipped_spec("tiny"), inputs["H1"], labels[train], cfg, 0)
    active = logs["triplet_active"]
    assert len(active) == 2 and active[1] <= active[0]


def test_triplet_stage_without_pairs_is_a_no_op():
    x, y = toy_dataset(n_classes=4, per_class=1)
    net = build_network(shipped_spec("tiny").with_classes(4), seed=0)
    before = {k: v.copy() for k, v in net.params.items()}
    finetune_stage_triplet(net, x, y, TrainConfig())
    for k in before:
        assert np.array_equal(before[k], net.params[k])


# -- checkpoint ------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = build_network(shipped_spec("tiny").with_classes(5), seed=4)
    p = tmp_path / "net.mmnn"
    save_network(net, p)
    back = load_network(p)
    assert back.spec == net.spec
    for k in net.params:
        assert np.array_equal(back.params[k], net.params[k])
    assert to_bytes(back) == p.read_bytes()


def test_checkpoint_corruption_rejected():
    data = to_bytes(build_network(shipped_spec("tiny"), seed=0))
    with pytest.raises(FormatError, match="magic"):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="version"):
        from_bytes(data[:4] + (99).to_bytes(4, "little") + data[8:])
    with pytest.raises(FormatError):
        from_bytes(data[:-3])
