"""Command-line entry point: ``mmdfr <command> [flags]``.

Exit status: 0 success, 2 usage or configuration error, 3 data error,
4 numeric divergence.  Each run appends one JSON line to the run log
(``--runlog`` or stderr).
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from mmdfr import MODALITIES, __version__
from mmdfr.errors import ConfigError, DataError, DivergenceError, MMDFRError

log = logging.getLogger("mmdfr")


class Run:
    """Per-invocation bookkeeping for the run log."""

    def __init__(self, args, config):
        self.args = args
        self.config = config
        self.inputs = []
        self.outputs = []
        self.timings = {}
        self._t = time.time()

    def reads(self, *paths):
        self.inputs += [str(p) for p in paths if p is not None]

    def wrote(self, *paths):
        self.outputs += [str(p) for p in paths]

    def lap(self, name):
        now = time.time()
        self.timings[name] = round(now - self._t, 4)
        self._t = now

    def entry(self, status, error=None):
        return {"command": self.args.command, "config_digest": self.config.digest,
                "seed": self.args.seed, "threads": self.args.threads, "status": status,
                "error": error, "inputs": self.inputs, "outputs": self.outputs,
                "timings": self.timings}


def _need(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def _exists(path, what):
    if not Path(path).exists():
        raise DataError(f"{what} {path} does not exist")
    return path


def _lock(out_path):
    """Single-instance guard for training commands: a lock file in the output directory."""
    from filelock import FileLock, Timeout

    directory = Path(out_path).resolve().parent
    directory.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(directory / ".mmdfr.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise DataError(f"another training command holds the lock in {directory}") from None
    return lock


def _manifest(path):
    from mmdfr.data.manifest import load_manifest

    return load_manifest(_exists(path, "manifest"))


def _image(rec, manifest_path):
    from mmdfr.data.manifest import resolve_path
    from mmdfr.geometry.image import read_pgm

    p = resolve_path(rec, manifest_path)
    if not p.exists():
        raise DataError(f"image {p} listed in {manifest_path} does not exist")
    return read_pgm(p)


def _ref(key):
    """Feature keys are manifest paths; pair files name images without an extension."""
    return key.rsplit(".", 1)[0] if "." in Path(key).name else key


def _labels_for(store, records):
    by_path = {r.path: r.subject for r in records}
    missing = [k for k in store.keys() if k not in by_path]
    if missing:
        raise DataError(f"feature key {missing[0]!r} has no manifest record")
    subjects = list(dict.fromkeys(by_path[k] for k in store.keys()))
    index = {s: i for i, s in enumerate(subjects)}
    return np.array([index[by_path[k]] for k in store.keys()])


def _modalities(args, config):
    if getattr(args, "modalities", None):
        from mmdfr.fusion import check_mask

        return tuple(check_mask(args.modalities.replace(",", " ").split()))
    return config.modalities


# -- commands -------------------------------------------------------------------

def cmd_synth(args, config, run):
    from mmdfr.data.synth import SynthConfig, synth_generate, synth_pairs, write_dataset
    from mmdfr.evaluation import write_pairs

    out = _need(args.out, "--out")
    kw = dict(subject_count=args.subjects, images_per_subject=args.per_subject,
              image_size=args.size, rng_seed=args.seed)
    cfg = SynthConfig.clean(**kw) if args.clean else SynthConfig(**kw)
    pairs = Path(out) / "pairs.txt"
    if args.dry_run:
        return [("writes", Path(out) / "manifest.tsv"), ("writes", pairs)]
    images, records = synth_generate(cfg)
    manifest = write_dataset(images, records, out)
    run.wrote(manifest)
    if args.pairs_per_fold > 0 and cfg.subject_count >= 2 and cfg.images_per_subject >= 2:
        write_pairs(synth_pairs(records, 10, args.pairs_per_fold, args.seed), pairs)
        run.wrote(pairs)
    print(f"{len(records)} images of {cfg.subject_count} subjects -> {manifest}")


def cmd_align(args, config, run):
    from mmdfr.geometry.image import write_pgm
    from mmdfr.geometry.mesh import make_face_mesh, read_mesh
    from mmdfr.geometry.modalities import GeometryConfig, build_modalities

    manifest = _need(args.manifest or config.manifest, "--manifest")
    out = Path(_need(args.out, "--out"))
    tags = _modalities(args, config)
    if args.dry_run:
        return [("reads", manifest), ("reads", config.mesh or "<built-in mesh>"), ("writes", out)]
    records = _manifest(manifest)
    run.reads(manifest, config.mesh)
    mesh = read_mesh(config.mesh) if config.mesh else make_face_mesh()
    geo = GeometryConfig(frontal_fallback=config.frontal_fallback)
    fallbacks = 0
    for rec in records:
        bundle = build_modalities(_image(rec, manifest), rec.landmarks, mesh, geo, need=tags)
        fallbacks += int(bundle.frontal_fallback)
        stem = out / _ref(rec.path)
        stem.mkdir(parents=True, exist_ok=True)
        for t in tags:
            write_pgm(stem / f"{t}.pgm", bundle.get(t))
    run.wrote(out)
    print(f"aligned {len(records)} images into {out} ({fallbacks} frontal fallbacks)")


def _training_inputs(records, manifest, tag, mesh, augment_cfg, geo):
    from mmdfr.data.augment import augment
    from mmdfr.geometry.modalities import build_modalities

    subjects = list(dict.fromkeys(r.subject for r in records))
    index = {s: i for i, s in enumerate(subjects)}
    rng = np.random.default_rng(augment_cfg.rng_seed)
    imgs, labels = [], []
    for rec in records:
        for _, img, lm in augment(rec, _image(rec, manifest), augment_cfg, rng):
            imgs.append(build_modalities(img, lm, mesh, geo, need=(tag,)).get(tag))
            labels.append(index[rec.subject])
    return imgs, np.array(labels, dtype=np.int64), subjects


def cmd_train_cnn(args, config, run):
    from mmdfr.geometry.mesh import make_face_mesh, read_mesh
    from mmdfr.geometry.modalities import GeometryConfig
    from mmdfr.nn.checkpoint import save_network
    from mmdfr.nn.network import build_network
    from mmdfr.nn.spec import parse_netspec, shipped_spec
    from mmdfr.nn.train import finetune_stage_triplet, train_stage_softmax
    from mmdfr.pipeline import prepare_input

    manifest = _need(args.manifest or config.manifest, "--manifest")
    tag = args.modality
    out = _need(args.out or config.checkpoints.get(tag), "--out")
    spec_ref = args.spec or config.nets[tag]
    if args.dry_run:
        return [("reads", manifest), ("reads", f"spec {spec_ref}"), ("writes", out)]
    lock = _lock(out)
    try:
        if Path(spec_ref).exists():
            spec = parse_netspec(Path(spec_ref).read_text(encoding="utf-8"))
        else:
            spec = shipped_spec(spec_ref)
        records = _manifest(manifest)
        run.reads(manifest, config.mesh)
        mesh = read_mesh(config.mesh) if config.mesh else make_face_mesh()
        over = {"rng_seed": args.seed}
        train_cfg = config.section("train", **over)
        if args.epochs is not None:
            train_cfg.epochs_stage1 = args.epochs
        imgs, labels, subjects = _training_inputs(
            records, manifest, tag, mesh, config.section("augment", **over),
            GeometryConfig(frontal_fallback=config.frontal_fallback))
        run.lap("inputs")
        net = build_network(spec.with_classes(len(subjects)), seed=args.seed,
                            dropout_ratio=train_cfg.dropout_ratio)
        x = np.stack([prepare_input(im, net) for im in imgs])
        net, slog = train_stage_softmax(net, x, labels, train_cfg)
        net, tlog = finetune_stage_triplet(net, x, labels, train_cfg)
        run.lap("train")
        save_network(net, out)
        run.wrote(out)
        print(f"{tag}: {len(x)} training inputs, {len(subjects)} classes, "
              f"final softmax loss {slog.epoch_loss[-1]:.4f}, triplet loss "
              f"{tlog.epoch_loss[-1] if tlog.epoch_loss else float('nan'):.4f} -> {out}")
    finally:
        lock.release()


def _representer(config, tags):
    from mmdfr.pipeline import Representer, dependencies

    config.modalities = tags
    for role, p in dependencies(config):
        if role == "sae":
            continue
        if p is None:
            raise ConfigError(f"{role} is required for modalities {list(tags)}")
    sae_path = config.sae
    config.sae = "identity"
    try:
        rep = Representer.from_config(config)
    finally:
        config.sae = sae_path
    return rep


def cmd_extract(args, config, run):
    from mmdfr.data.store import FeatureStore, feature_store_write
    from mmdfr.fusion import load_sae
    from mmdfr.pipeline import dependencies

    manifest = _need(args.manifest or config.manifest, "--manifest")
    out = _need(args.out or config.features, "--out")
    tags = _modalities(args, config)
    config.modalities = tags
    deps = [d for d in dependencies(config) if not (args.stage == "concat" and d[0] == "sae")]
    if args.dry_run:
        return [("reads", manifest)] + [("reads", f"{r} {p}") for r, p in deps] + [("writes", out)]
    records = _manifest(manifest)
    rep = _representer(config, tags)
    sae = None
    if args.stage == "signature":
        if _need(config.sae, "sae (config)") != "identity":
            sae = load_sae(_exists(config.sae, "SAE checkpoint"))
            if tuple(sae.mask) != tags:
                raise ConfigError(f"SAE was trained for {list(sae.mask)}, extracting {list(tags)}")
    run.reads(manifest, *(p for _, p in deps))
    store = None
    batch = 32
    for start in range(0, len(records), batch):
        chunk = records[start:start + batch]
        vecs = rep.concat([_image(r, manifest) for r in chunk], [r.landmarks for r in chunk])
        if sae is not None:
            vecs = sae.signature(vecs)
        if store is None:
            store = FeatureStore(vecs.shape[1])
        for rec, v in zip(chunk, vecs):
            store.add(rec.path, v)
    if store is None:
        raise DataError(f"{manifest} lists no images")
    feature_store_write(store, out)
    run.wrote(out)
    print(f"{len(store)} {args.stage} vectors of dimension {store.dim} -> {out}"
          + (f" ({rep.fallbacks} frontal fallbacks)" if rep.fallbacks else ""))


def cmd_train_sae(args, config, run):
    from mmdfr.fusion import fit_fusion, save_sae
    from mmdfr.pipeline import dependencies

    manifest = _need(args.manifest or config.manifest, "--manifest")
    out = _need(args.out or config.sae, "--out")
    tags = _modalities(args, config)
    config.modalities = tags
    deps = [d for d in dependencies(config) if d[0] != "sae"]
    if args.dry_run:
        return [("reads", manifest)] + [("reads", f"{r} {p}") for r, p in deps] + [("writes", out)]
    lock = _lock(out)
    try:
        records = _manifest(manifest)
        rep = _representer(config, tags)
        run.reads(manifest, *(p for _, p in deps))
        rows = []
        for rec in records:
            inputs = rep.modality_inputs([_image(rec, manifest)], [rec.landmarks])
            rows.append(inputs)
        from mmdfr.pipeline import modality_feature

        if rep.flip_mode == "concat":
            train = np.concatenate([modality_feature(rep.nets[t], [r[t][0] for r in rows], flip_mode="concat")
                                    for t in tags], axis=1)
        else:
            parts = {t: modality_feature(rep.nets[t], [r[t][0] for r in rows], separate=True) for t in tags}
            # originals and mirror images both serve as training vectors
            train = np.concatenate([np.concatenate([parts[t][j] for t in tags], axis=1) for j in (0, 1)])
        run.lap("features")
        sae_cfg = config.section("sae", rng_seed=args.seed)
        if args.widths:
            sae_cfg.widths = tuple(int(w) for w in args.widths.split(","))
        if args.kind:
            sae_cfg.kind = args.kind
        model = fit_fusion(train, sae_cfg, mask=tags)
        run.lap("train")
        save_sae(model, out)
        run.wrote(out)
        print(f"SAE {model.input_dim}->{'->'.join(map(str, model.widths))} ({model.kind}), "
              f"final losses {[round(h[-1], 5) for h in model.history]} -> {out}")
    finally:
        lock.release()


def _store(path):
    from mmdfr.data.store import feature_store_read

    return feature_store_read(_exists(path, "feature store"))


def cmd_train_pca(args, config, run):
    from mmdfr.matching import pca_fit, save_pca

    features = _need(args.features or config.features, "--features")
    out = _need(args.out or config.pca, "--out")
    if args.dry_run:
        return [("reads", features), ("writes", out)]
    lock = _lock(out)
    try:
        store = _store(features)
        run.reads(features)
        model = pca_fit(store.matrix(), args.dim, whiten=args.whiten)
        save_pca(model, out)
        run.wrote(out)
        print(f"PCA {store.dim}->{model.dim}, retained variance "
              f"{model.eigenvalues.sum():.6g} -> {out}")
    finally:
        lock.release()


def cmd_train_jb(args, config, run):
    from mmdfr.matching import jb_fit, load_pca, save_jb

    features = _need(args.features or config.features, "--features")
    manifest = _need(args.manifest or config.manifest, "--manifest")
    pca_path = _need(args.pca or config.pca, "--pca")
    out = _need(args.out or config.jb, "--out")
    if args.dry_run:
        return [("reads", features), ("reads", manifest), ("reads", pca_path), ("writes", out)]
    lock = _lock(out)
    try:
        store = _store(features)
        labels = _labels_for(store, _manifest(manifest))
        pca = load_pca(_exists(pca_path, "PCA checkpoint"))
        run.reads(features, manifest, pca_path)
        model = jb_fit(pca.project(store.matrix()), labels, max_iters=args.iters)
        save_jb(model, out)
        run.wrote(out)
        print(f"JB on {len(store)} vectors / {labels.max() + 1} subjects, {len(model.loglik) - 1} EM "
              f"iterations, log-likelihood {model.loglik[-1]:.6g} -> {out}")
    finally:
        lock.release()


def _scorers(store, config, mode, pca_path, jb_path):
    """(pair scorer factory, matrix scorer) for the chosen matching mode."""
    from mmdfr.matching import (cosine_matrix, cosine_similarity, jb_score, jb_score_matrix,
                                load_jb, load_pca, pca_reestimate_mean)

    vec = {}
    for k, v in store.items():
        vec[k] = v
        vec.setdefault(_ref(k), v)

    def lookup(ref):
        try:
            return vec[ref]
        except KeyError:
            raise DataError(f"no feature vector for image {ref!r}") from None

    if mode == "unsupervised":
        def fixed(pairs):
            return cosine_similarity(np.stack([lookup(p.a) for p in pairs]),
                                     np.stack([lookup(p.b) for p in pairs]))
        return None, fixed, cosine_matrix

    pca = load_pca(_exists(_need(pca_path, "--pca"), "PCA checkpoint"))
    jb = load_jb(_exists(_need(jb_path, "--jb"), "JB checkpoint"))

    def fit(train_pairs):
        # the PCA mean is re-estimated on the images of the held-in folds only
        refs = list(dict.fromkeys(r for p in train_pairs for r in (p.a, p.b)))
        model = pca_reestimate_mean(pca, np.stack([lookup(r) for r in refs]))

        def score(pairs):
            return jb_score(jb, model.project(np.stack([lookup(p.a) for p in pairs])),
                            model.project(np.stack([lookup(p.b) for p in pairs])))
        return score

    def matrix(a, b):
        return jb_score_matrix(jb, pca.project(a), pca.project(b))

    return fit, None, matrix


def cmd_verify(args, config, run):
    from mmdfr.evaluation import emit_report, filter_pairs, load_exclusions, parse_pairs, verify_tenfold

    features = _need(args.features or config.features, "--features")
    pairs_path = _need(args.pairs or config.pairs, "--pairs")
    mode = args.mode or config.mode
    report = _need(args.report or config.out, "--report")
    pca_path, jb_path = args.pca or config.pca, args.jb or config.jb
    exclusions = args.exclusions or config.exclusions
    if args.dry_run:
        deps = [("reads", features), ("reads", pairs_path)]
        if mode == "supervised":
            deps += [("reads", pca_path), ("reads", jb_path)]
        return deps + [("writes", f"{report}.json")]
    store = _store(features)
    folds = parse_pairs(_exists(pairs_path, "pairs file"))
    if exclusions:
        folds = filter_pairs(folds, load_exclusions(_exists(exclusions, "exclusion list")))
    run.reads(features, pairs_path, exclusions)
    fit, fixed, _ = _scorers(store, config, mode, pca_path, jb_path)
    if mode == "supervised":
        run.reads(pca_path, jb_path)
    rep = verify_tenfold(folds, scorer=fixed, fit=fit)
    run.wrote(*emit_report(rep, report, figures=args.figures))
    print(f"{mode} verification: {rep.mean_accuracy:.4f} +- {rep.std_error:.4f} "
          f"over {len(folds)} folds, AUC {rep.auc:.4f}")


def cmd_identify(args, config, run):
    from mmdfr.evaluation import emit_report, identify, split_gallery_probe

    features = _need(args.features or config.features, "--features")
    manifest = _need(args.manifest or config.manifest, "--manifest")
    mode = args.mode or config.mode
    report = _need(args.report or config.out, "--report")
    pca_path, jb_path = args.pca or config.pca, args.jb or config.jb
    if args.dry_run:
        deps = [("reads", features), ("reads", manifest)]
        if mode == "supervised":
            deps += [("reads", pca_path), ("reads", jb_path)]
        return deps + [("writes", f"{report}.json")]
    store = _store(features)
    records = _manifest(manifest)
    run.reads(features, manifest)
    split = split_gallery_probe(records, args.gallery_per_subject)
    _, _, matrix = _scorers(store, config, mode, pca_path, jb_path)
    feats = {r.path: store[r.path] for r in records if r.path in store}
    rep = identify(split, feats, scorer=matrix, aggregate=args.aggregate)
    run.wrote(*emit_report(rep, report, figures=args.figures))
    print(f"{mode} identification: rank-1 {rep.rank1:.4f} over {len(split.probe)} probes, "
          f"{len(split.gallery)} gallery images")


def cmd_ablate_relu(args, config, run):
    import csv

    from mmdfr.benchmark import BenchmarkConfig, run_ablation
    from mmdfr.plotting import plot_bars

    out = Path(_need(args.out, "--out"))
    if args.dry_run:
        return [("writes", out / "ablation.csv"), ("writes", out / "ablation.png")]
    cfg = BenchmarkConfig(subjects=args.subjects, images_per_subject=args.per_subject,
                          train_per_subject=args.per_subject // 2, seed=args.seed)
    if args.epochs is not None:
        cfg.train.epochs_stage1 = args.epochs
    rows = run_ablation(cfg, tag=args.modality)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "accuracy", "std_error", "rank1"])
        for r in rows:
            w.writerow([r["variant"], repr(r["accuracy"]), repr(r["std_error"]), repr(r["rank1"])])
    png = plot_bars({r["variant"]: r["accuracy"] for r in rows}, out / "ablation.png",
                    ylabel="verification accuracy", title=f"ReLU placement ({args.modality})")
    run.wrote(out / "ablation.csv", png)
    print(format_table(rows))


def format_table(rows):
    lines = [f"{'variant':<16}{'accuracy':>10}{'S_E':>9}{'rank-1':>9}"]
    for r in rows:
        lines.append(f"{r['variant']:<16}{r['accuracy']:>10.4f}{r['std_error']:>9.4f}{r['rank1']:>9.4f}")
    return "\n".join(lines)


def cmd_report_dist(args, config, run):
    from mmdfr.data.augment import FLIP_ONLY
    from mmdfr.data.manifest import distribution_report, write_distribution

    manifest = _need(args.manifest or config.manifest, "--manifest")
    out = _need(args.out, "--out")
    if args.dry_run:
        return [("reads", manifest), ("writes", out)]
    records = _manifest(manifest)
    run.reads(manifest)
    if args.augment == "none":
        mult = 1
    elif args.augment == "flip":
        mult = FLIP_ONLY.variants_per_image
    else:
        mult = config.section("augment").variants_per_image
    rep = distribution_report(records, multiplicity=mult)
    run.wrote(write_distribution(rep, out))
    if args.figure:
        from mmdfr.plotting import plot_distribution

        run.wrote(plot_distribution([c for _, c in rep.counts], args.figure))
    print(f"{len(rep.counts)} subjects, {rep.total} images; per subject min {rep.minimum}, "
          f"median {rep.median:g}, max {rep.maximum}")


COMMANDS = {
    "synth": cmd_synth, "align": cmd_align, "extract": cmd_extract, "train-cnn": cmd_train_cnn,
    "train-sae": cmd_train_sae, "train-pca": cmd_train_pca, "train-jb": cmd_train_jb,
    "verify": cmd_verify, "identify": cmd_identify, "ablate-relu": cmd_ablate_relu,
    "report-dist": cmd_report_dist,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="key = value settings file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--dry-run", action="store_true", help="list the files the command would use")
    g.add_argument("--runlog", help="append the run log line here instead of stderr")
    g.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="mmdfr", description="multimodal deep face representation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic face dataset")
    s.add_argument("--out")
    s.add_argument("--subjects", type=int, default=10)
    s.add_argument("--per-subject", type=int, default=20)
    s.add_argument("--size", type=int, default=160)
    s.add_argument("--clean", action="store_true", help="no nuisance transforms or noise")
    s.add_argument("--pairs-per-fold", type=int, default=10,
                   help="same and different pairs per fold in pairs.txt (0: no pairs file)")

    s = sub.add_parser("align", parents=[common], help="write the modality inputs of every image")
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--modalities")

    s = sub.add_parser("train-cnn", parents=[common], help="train one modality network")
    s.add_argument("--manifest")
    s.add_argument("--modality", choices=MODALITIES, required=True)
    s.add_argument("--spec", help="shipped spec name or spec file")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out")

    s = sub.add_parser("extract", parents=[common], help="compute per-image feature vectors")
    s.add_argument("--manifest")
    s.add_argument("--modalities")
    s.add_argument("--stage", choices=("signature", "concat"), default="signature")
    s.add_argument("--out")

    s = sub.add_parser("train-sae", parents=[common], help="train the fusion auto-encoder")
    s.add_argument("--manifest")
    s.add_argument("--modalities")
    s.add_argument("--widths", help="comma separated, e.g. 2048,1024,512")
    s.add_argument("--kind", choices=("sigmoid", "tanh"))
    s.add_argument("--out")

    s = sub.add_parser("train-pca", parents=[common], help="fit PCA on a feature store")
    s.add_argument("--features")
    s.add_argument("--dim", type=int, default=110)
    s.add_argument("--whiten", action="store_true")
    s.add_argument("--out")

    s = sub.add_parser("train-jb", parents=[common], help="fit Joint Bayesian on PCA projections")
    s.add_argument("--features")
    s.add_argument("--manifest")
    s.add_argument("--pca")
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--out")

    for name, text in (("verify", "ten-fold pair verification"), ("identify", "gallery/probe identification")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--features")
        s.add_argument("--mode", choices=("unsupervised", "supervised"))
        s.add_argument("--pca")
        s.add_argument("--jb")
        s.add_argument("--report", help="output stem for .json and .csv files")
        s.add_argument("--figures", action="store_true", help="also render a PNG")
        if name == "verify":
            s.add_argument("--pairs")
            s.add_argument("--exclusions", help="image refs whose pairs are dropped")
        else:
            s.add_argument("--manifest")
            s.add_argument("--gallery-per-subject", type=int, default=5)
            s.add_argument("--aggregate", choices=("max", "mean"), default="max")

    s = sub.add_parser("ablate-relu", parents=[common], help="compare ReLU-placement variants")
    s.add_argument("--out")
    s.add_argument("--modality", choices=MODALITIES, default="H1")
    s.add_argument("--subjects", type=int, default=10)
    s.add_argument("--per-subject", type=int, default=40)
    s.add_argument("--epochs", type=int)

    s = sub.add_parser("report-dist", parents=[common], help="per-subject image counts")
    s.add_argument("--manifest")
    s.add_argument("--augment", choices=("none", "flip", "config"), default="none")
    s.add_argument("--out")
    s.add_argument("--figure", help="PNG path for the sorted-count plot")
    return p


def _emit_log(args, entry):
    line = json.dumps(entry, sort_keys=True)
    if getattr(args, "runlog", None):
        with open(args.runlog, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    else:
        print(line, file=sys.stderr)


def main(argv=None):
    from mmdfr.pipeline import PipelineConfig, load_config

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        config = load_config(args.config) if args.config else PipelineConfig()
        run = Run(args, config)
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=max(1, args.threads)):
            plan = COMMANDS[args.command](args, config, run)
        if args.dry_run:
            for action, what in plan or []:
                print(f"{action}\t{what}")
        run.lap("total")
        _emit_log(args, run.entry("ok"))
        return 0
    except MMDFRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run is not None:
            _emit_log(args, run.entry("error", str(exc)))
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run is not None:
            _emit_log(args, run.entry("error", str(exc)))
        return DataError.exit_code


def console():
    sys.exit(main())


if __name__ == "__main__":
    console()
