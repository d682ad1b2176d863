import numpy as np
import pytest

from mmdfr.data.synth import SynthConfig, synth_generate
from mmdfr.errors import ConfigError
from mmdfr.fusion import flip_average, l2_normalize
from mmdfr.geometry.image import flip_horizontal
from mmdfr.geometry.modalities import build_modalities
from mmdfr.geometry.mesh import make_face_mesh
from mmdfr.nn.checkpoint import save_network
from mmdfr.nn.network import build_network
from mmdfr.nn.spec import shipped_spec
from mmdfr.pipeline import (PipelineConfig, Representer, dependencies, parse_config,
                            prepare_input, represent)


def test_parse_config_values(tmp_path):
    cfg = parse_config("""\
# comment
modalities = H1, P2
net.P2 = tiny-patch
ckpt.H1 = nets/h1.mmnn
sae = identity
mode = supervised
train.epochs_stage1 = 7
augment.downsample_factors = 2 3
augment.flip = no
""", tmp_path)
    assert cfg.modalities == ("H1", "P2")
    assert cfg.nets["P2"] == "tiny-patch" and cfg.nets["H1"] == "nn2" and cfg.nets["P1"] == "nn1"
    assert cfg.checkpoints["H1"] == str(tmp_path / "nets/h1.mmnn")
    assert cfg.sae == "identity"
    assert cfg.section("train").epochs_stage1 == 7
    aug = cfg.section("augment")
    assert aug.downsample_factors == (2.0, 3.0) and aug.flip is False
    assert cfg.digest == parse_config(cfg.text).digest != PipelineConfig().digest


@pytest.mark.parametrize("text, msg", [
    ("modalities", "key = value"),
    ("colour = red", "unknown key"),
    ("ckpt.P9 = x", "unknown modality"),
    ("train.speed = 2", "unknown setting"),
    ("train.epochs_stage1 = many", "bad value"),
    ("augment.flip = maybe", "bad value"),
    ("mode = fuzzy", "mode"),
    ("flip_mode = max", "flip_mode"),
    ("modalities = P1 H1", "fixed order"),
])
def test_parse_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_dependencies_follow_the_modality_subset():
    cfg = parse_config("modalities = H1\nmesh = m.obj\nckpt.H1 = a\nmode = supervised\npca = p\njb = j")
    assert dependencies(cfg) == [("ckpt.H1", "a"), ("sae", None)]
    cfg.modalities = ("H1", "P3")
    deps = dependencies(cfg, include_matcher=True)
    assert deps[0] == ("mesh", "m.obj") and ("ckpt.P3", None) in deps
    assert deps[-2:] == [("pca", "p"), ("jb", "j")]


@pytest.fixture(scope="module")
def h1_setup(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    net = build_network(shipped_spec("tiny").with_classes(3), seed=0)
    save_network(net, d / "h1.mmnn")
    images, records = synth_generate(SynthConfig(subject_count=2, images_per_subject=2))
    cfg = parse_config(f"modalities = H1\nckpt.H1 = {d / 'h1.mmnn'}\nsae = identity")
    return cfg, net, images, records


def test_identity_sae_gives_normalized_flip_average(h1_setup):
    cfg, net, images, records = h1_setup
    sig = represent(images[0], records[0].landmarks, cfg)
    crop = build_modalities(images[0], records[0].landmarks, make_face_mesh(), need=("H1",)).get("H1")
    x = prepare_input(crop, net)
    f = net.extract_features(np.stack([x, flip_horizontal(x)]))
    expected = l2_normalize(flip_average(f[0], f[1]))
    assert sig.shape == (net.feature_dim,)
    assert np.abs(sig - expected).max() < 1e-6
    assert abs(np.linalg.norm(sig) - 1) < 1e-5


def test_represent_is_deterministic(h1_setup):
    cfg, _, images, records = h1_setup
    rep = Representer.from_config(cfg)
    a = rep.represent_batch(images, [r.landmarks for r in records])
    b = Representer.from_config(cfg).represent_batch(images, [r.landmarks for r in records])
    assert np.array_equal(a, b)
    assert np.array_equal(a[1], rep.represent(images[1], records[1].landmarks))
    assert not np.allclose(a[0], a[2])


def test_missing_and_mismatched_checkpoints(h1_setup, tmp_path):
    cfg, *_ = h1_setup
    with pytest.raises(ConfigError, match="ckpt.H2"):
        Representer.from_config(parse_config(
            f"modalities = H1 H2\nckpt.H1 = {cfg.checkpoints['H1']}\nsae = identity"))
    with pytest.raises(ConfigError, match="does not exist"):
        Representer.from_config(parse_config(f"modalities = H1\nckpt.H1 = {tmp_path / 'gone'}\nsae = identity"))
    with pytest.raises(ConfigError, match="sae"):
        Representer.from_config(parse_config(f"modalities = H1\nckpt.H1 = {cfg.checkpoints['H1']}"))
    with pytest.raises(ConfigError, match="no network"):
        Representer({}, None, modalities=("H1",))


def test_prepare_input_resizes_only_when_needed():
    net = build_network(shipped_spec("tiny-patch").with_classes(2), seed=0)
    shape = net.spec.input_shape
    same = np.random.default_rng(0).random(shape).astype(np.float32)
    assert prepare_input(same, net) is same
    assert prepare_input(np.zeros((100, 100)), net).shape == shape


def test_flip_concat_mode(h1_setup):
    cfg, net, images, records = h1_setup
    concat = parse_config(cfg.text + "\nflip_mode = concat")
    sig = represent(images[0], records[0].landmarks, concat)
    crop = build_modalities(images[0], records[0].landmarks, make_face_mesh(), need=("H1",)).get("H1")
    x = prepare_input(crop, net)
    f = net.extract_features(np.stack([x, flip_horizontal(x)]))
    assert sig.shape == (2 * net.feature_dim,)
    assert np.abs(sig - l2_normalize(np.concatenate([f[0], f[1]]))).max() < 1e-6
    with pytest.raises(ConfigError, match="flip_mode"):
        parse_config("flip_mode = stack")
