"""Desk-scale end-to-end experiment on procedural faces.

Images of each synthetic subject are split in file order: the first
``train_per_subject`` train the networks, the fusion stage and the matcher;
the rest are held out for verification pairs and the gallery/probe split.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from mmdfr import MODALITIES
from mmdfr.data.augment import AugmentConfig, augment
from mmdfr.data.synth import SynthConfig, synth_generate
from mmdfr.evaluation import Pair, identify, split_gallery_probe, verify_tenfold
from mmdfr.fusion import SAEConfig, fit_fusion
from mmdfr.geometry.image import flip_horizontal
from mmdfr.geometry.mesh import make_face_mesh
from mmdfr.geometry.modalities import build_modalities
from mmdfr.matching import cosine_matrix, cosine_similarity, jb_fit, jb_score, jb_score_matrix, pca_fit
from mmdfr.nn.network import build_network
from mmdfr.nn.spec import VARIANTS, make_ablation_variant, shipped_spec
from mmdfr.nn.train import TrainConfig, finetune_stage_triplet, train_stage_softmax
from mmdfr.pipeline import modality_feature, prepare_input

log = logging.getLogger(__name__)


@dataclass
class BenchmarkConfig:
    subjects: int = 10
    images_per_subject: int = 40
    train_per_subject: int = 20
    modalities: tuple = ("H1", "H2")
    spec: str = "tiny"
    patch_spec: str = "tiny-patch"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        batch_size=32, epochs_stage1=20, lr_step_epochs=12, triplet_epochs=2))
    # the mirror copy is added at network-training time; this covers jitter and down-sampling
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(
        flip=False, jitter_copies=1, downsample_factors=(2.0,)))
    sae: SAEConfig = field(default_factory=lambda: SAEConfig(widths=(112, 96, 80)))
    pca_dim: int = 32
    pairs_per_fold: int = 30  # of each kind
    folds: int = 10
    seed: int = 0


def synth_config(cfg):
    return SynthConfig(subject_count=cfg.subjects, images_per_subject=cfg.images_per_subject,
                       rng_seed=cfg.seed)


def split_indices(labels, train_per_subject):
    """File-order split: positions < train_per_subject within each subject train."""
    seen = {}
    train = []
    for i, lab in enumerate(labels):
        train.append(seen.get(lab, 0) < train_per_subject)
        seen[lab] = seen.get(lab, 0) + 1
    train = np.array(train)
    return np.nonzero(train)[0], np.nonzero(~train)[0]


def make_pairs(labels, indices, folds, per_fold, rng):
    """Disjoint-per-fold verification pairs over ``indices`` (refs are str indices)."""
    labels = np.asarray(labels)
    out = []
    by_subject = {}
    for i in indices:
        by_subject.setdefault(labels[i], []).append(i)
    subjects = sorted(by_subject)
    for _ in range(folds):
        fold = []
        while sum(p.same for p in fold) < per_fold:
            s = subjects[rng.integers(len(subjects))]
            a, b = rng.choice(by_subject[s], 2, replace=False)
            fold.append(Pair(str(a), str(b), True))
        while sum(not p.same for p in fold) < per_fold:
            s, t = rng.choice(len(subjects), 2, replace=False)
            fold.append(Pair(str(rng.choice(by_subject[subjects[s]])),
                             str(rng.choice(by_subject[subjects[t]])), False))
        out.append(fold)
    return out


def modality_images(images, landmarks, tags, mesh):
    out = {t: [] for t in tags}
    fallbacks = 0
    for img, lm in zip(images, landmarks):
        b = build_modalities(img, lm, mesh, need=tags)
        fallbacks += int(b.frontal_fallback)
        for t in tags:
            out[t].append(b.get(t))
    return out, fallbacks


def augmented_training_inputs(images, records, train_idx, labels, tags, mesh, config):
    """Modality inputs of the extra augmentation variants of the training images."""
    rng = np.random.default_rng(config.rng_seed)
    imgs, lms, labs = [], [], []
    for i in train_idx:
        for tag, img, lm in augment(records[i], images[i], config, rng)[1:]:
            imgs.append(img)
            lms.append(lm)
            labs.append(labels[i])
    inputs, _ = modality_images(imgs, lms, tags, mesh)
    return inputs, np.array(labs, dtype=np.int64)


def train_modality_net(spec, images, labels, cfg, seed):
    """Softmax then triplet stage on the training images plus their mirror images."""
    net = build_network(spec.with_classes(int(labels.max()) + 1), seed=seed,
                        dropout_ratio=cfg.train.dropout_ratio)
    x = np.stack([prepare_input(im, net) for im in images])
    x = np.concatenate([x, np.stack([flip_horizontal(im) for im in x])])
    y = np.concatenate([labels, labels])
    net, softmax_log = train_stage_softmax(net, x, y, cfg.train)
    net, triplet_log = finetune_stage_triplet(net, x, y, cfg.train)
    return net, {"softmax_loss": softmax_log.epoch_loss, "triplet_loss": triplet_log.epoch_loss,
                 "triplet_active": triplet_log.active_fraction}


def evaluate_signatures(sig, labels, test_idx, folds, scorer="cosine", train_sig=None,
                        train_labels=None, pca_dim=32):
    """Verification and identification on held-out signatures."""
    keyed = {str(i): sig[i] for i in test_idx}
    if scorer == "cosine":
        def pair_scorer(pairs):
            a = np.stack([keyed[p.a] for p in pairs])
            b = np.stack([keyed[p.b] for p in pairs])
            return cosine_similarity(a, b)
        matrix = cosine_matrix
    else:
        pca = pca_fit(train_sig, min(pca_dim, sig.shape[1], len(train_sig) - 1))
        model = jb_fit(pca.project(train_sig), train_labels)
        proj = {k: pca.project(v) for k, v in keyed.items()}

        def pair_scorer(pairs):
            a = np.stack([proj[p.a] for p in pairs])
            b = np.stack([proj[p.b] for p in pairs])
            return jb_score(model, a, b)

        def matrix(a, b):
            return jb_score_matrix(model, pca.project(a), pca.project(b))
    ver = verify_tenfold(folds, scorer=pair_scorer)
    split = split_gallery_probe([(labels[i], str(i)) for i in test_idx])
    ident = identify(split, keyed, scorer=matrix)
    return ver, ident


def run_benchmark(cfg=None):
    """Train every stage and score fused and single-modality signatures on held-out images."""
    cfg = cfg or BenchmarkConfig()
    t0 = time.time()
    images, records = synth_generate(synth_config(cfg))
    subjects = sorted({r.subject for r in records})
    labels = np.array([subjects.index(r.subject) for r in records])
    train_idx, test_idx = split_indices(labels, cfg.train_per_subject)
    mesh = make_face_mesh()
    tags = tuple(t for t in MODALITIES if t in cfg.modalities)
    inputs, fallbacks = modality_images(images, [r.landmarks for r in records], tags, mesh)
    if cfg.augment is not None:
        extra, extra_labels = augmented_training_inputs(images, records, train_idx, labels, tags,
                                                        mesh, cfg.augment)
    else:
        extra, extra_labels = {t: [] for t in tags}, np.zeros(0, np.int64)
    timings = {"geometry": time.time() - t0}

    feats, separate, logs = {}, {}, {}
    for k, tag in enumerate(tags):
        t1 = time.time()
        spec = shipped_spec(cfg.spec if tag.startswith("H") else cfg.patch_spec)
        net, logs[tag] = train_modality_net(
            spec, [inputs[tag][i] for i in train_idx] + extra[tag],
            np.concatenate([labels[train_idx], extra_labels]), cfg, cfg.seed + 101 * k)
        feats[tag] = modality_feature(net, inputs[tag])
        separate[tag] = modality_feature(net, [inputs[tag][i] for i in train_idx], separate=True)
        timings[f"cnn_{tag}"] = time.time() - t1

    t1 = time.time()
    concat = np.concatenate([feats[t] for t in tags], axis=1)
    # fusion trains on the features of the training images and of their mirror images
    fusion_train = np.concatenate([np.concatenate([separate[t][j] for t in tags], axis=1)
                                   for j in (0, 1)])
    sae = fit_fusion(fusion_train, cfg.sae, mask=tags)
    fused = sae.signature(concat)
    timings["sae"] = time.time() - t1

    rng = np.random.default_rng(cfg.seed + 7)
    folds = make_pairs(labels, test_idx, cfg.folds, cfg.pairs_per_fold, rng)
    results = {}
    candidates = {"fused": fused, **{t: feats[t] for t in tags}}
    for name, sig in candidates.items():
        for kind in ("cosine", "jb"):
            ver, ident = evaluate_signatures(sig, labels, test_idx, folds, kind,
                                             sig[train_idx], labels[train_idx], cfg.pca_dim)
            results[f"{name}/{kind}"] = {"verification": ver, "identification": ident}
    timings["total"] = time.time() - t0
    return {"results": results, "logs": logs, "timings": timings, "fallbacks": fallbacks,
            "sae_history": sae.history, "folds": folds}


def run_ablation(cfg=None, tag="H1"):
    """Train the three ReLU-placement variants on one modality; cosine scores on held-out data."""
    cfg = cfg or BenchmarkConfig()
    images, records = synth_generate(synth_config(cfg))
    subjects = sorted({r.subject for r in records})
    labels = np.array([subjects.index(r.subject) for r in records])
    train_idx, test_idx = split_indices(labels, cfg.train_per_subject)
    mesh = make_face_mesh()
    inputs, _ = modality_images(images, [r.landmarks for r in records], (tag,), mesh)
    if cfg.augment is not None:
        extra, extra_labels = augmented_training_inputs(images, records, train_idx, labels, (tag,),
                                                        mesh, cfg.augment)
    else:
        extra, extra_labels = {tag: []}, np.zeros(0, np.int64)
    folds = make_pairs(labels, test_idx, cfg.folds, cfg.pairs_per_fold,
                       np.random.default_rng(cfg.seed + 7))
    base = shipped_spec(cfg.spec if tag.startswith("H") else cfg.patch_spec)
    rows = []
    for variant in VARIANTS:
        t1 = time.time()
        spec = make_ablation_variant(base, variant)
        net, _ = train_modality_net(spec, [inputs[tag][i] for i in train_idx] + extra[tag],
                                    np.concatenate([labels[train_idx], extra_labels]), cfg, cfg.seed)
        sig = modality_feature(net, inputs[tag])
        ver, ident = evaluate_signatures(sig, labels, test_idx, folds)
        rows.append({"variant": variant, "accuracy": ver.mean_accuracy, "std_error": ver.std_error,
                     "rank1": ident.rank1, "seconds": time.time() - t1})
    return rows
