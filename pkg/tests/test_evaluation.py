import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmdfr.errors import DataError, ParseError, ProtocolError
from mmdfr.evaluation import (IdentificationReport, Pair, VerificationReport, accuracy_at,
                              choose_threshold, emit_report, filter_pairs, identify, lfw_ref,
                              load_exclusions, parse_pairs, parse_report, roc_auc, roc_curve,
                              split_gallery_probe, verify_tenfold, write_pairs)
from mmdfr.matching import cosine_matrix


def make_folds(n_folds=10, per=20):
    folds = []
    for k in range(n_folds):
        fold = [Pair(f"f{k}s{i}a", f"f{k}s{i}b", True) for i in range(per)]
        fold += [Pair(f"f{k}d{i}a", f"f{k}d{i}b", False) for i in range(per)]
        folds.append(fold)
    return folds


def table_scorer(table):
    return lambda pairs: np.array([table[(p.a, p.b)] for p in pairs])


def random_table(folds, seed=0, informative=0.0):
    rng = np.random.default_rng(seed)
    return {(p.a, p.b): rng.normal() + informative * p.same for f in folds for p in f}


# -- verification ---------------------------------------------------------------------

def test_separable_scores():
    folds = make_folds()
    rep = verify_tenfold(folds, scorer=lambda pairs: np.array([float(p.same) for p in pairs]))
    assert rep.mean_accuracy == 1.0 and rep.std_error == 0.0
    assert len(rep.fold_accuracy) == 10
    assert rep.auc == 1.0


def test_label_independent_scores():
    folds = make_folds(per=100)
    rep = verify_tenfold(folds, scorer=table_scorer(random_table(folds, seed=3)))
    assert abs(rep.mean_accuracy - 0.5) < 0.05
    assert abs(rep.auc - 0.5) < 0.05


def test_standard_error_definition():
    folds = make_folds()
    rep = verify_tenfold(folds, scorer=table_scorer(random_table(folds, informative=1.0)))
    acc = np.array(rep.fold_accuracy)
    assert rep.std_error == pytest.approx(acc.std(ddof=1) / np.sqrt(10))
    assert rep.mean_accuracy == pytest.approx(acc.mean())


@given(st.integers(0, 1000), st.sampled_from(["exp", "cube", "affine", "arctan"]))
@settings(max_examples=25, deadline=None)
def test_monotone_transform_invariance(seed, kind):
    folds = make_folds(per=15)
    table = random_table(folds, seed=seed, informative=1.0)
    f = {"exp": np.exp, "cube": lambda v: v ** 3, "affine": lambda v: 3 * v - 7,
         "arctan": np.arctan}[kind]
    base = verify_tenfold(folds, scorer=table_scorer(table))
    moved = verify_tenfold(folds, scorer=table_scorer({k: float(f(v)) for k, v in table.items()}))
    assert abs(base.mean_accuracy - moved.mean_accuracy) < 1e-12
    assert base.fold_accuracy == moved.fold_accuracy


def test_threshold_chooser_never_sees_held_out_scores():
    folds = make_folds()
    table = random_table(folds, informative=1.0)
    fold_of = {(p.a, p.b): k for k, f in enumerate(folds) for p in f}
    by_value = {v: fold_of[key] for key, v in table.items()}
    seen = []

    def spy(scores, labels):
        seen.append({by_value[s] for s in scores})
        return choose_threshold(scores, labels)

    verify_tenfold(folds, scorer=table_scorer(table), chooser=spy)
    for k, folds_seen in enumerate(seen):
        assert folds_seen == set(range(10)) - {k}


def test_trainables_fit_on_held_in_folds_only():
    folds = make_folds()
    table = random_table(folds, informative=2.0)
    fitted_on = []

    def fit(train_pairs):
        fitted_on.append({p.a[:3].rstrip("sd") for p in train_pairs})
        return table_scorer(table)

    rep = verify_tenfold(folds, fit=fit)
    for k, names in enumerate(fitted_on):
        assert f"f{k}" not in names and len(names) == 9
    assert rep.mean_accuracy > 0.7


def test_verify_errors():
    folds = make_folds()
    with pytest.raises(ProtocolError):
        verify_tenfold(folds[:1], scorer=lambda p: np.zeros(len(p)))
    with pytest.raises(ValueError):
        verify_tenfold(folds)

    def broken(pairs):
        if any(p.a == "f3s2a" for p in pairs):
            raise KeyError("f3s2a")
        return np.zeros(len(pairs))

    with pytest.raises(ProtocolError, match="f3s2a"):
        verify_tenfold(folds, scorer=broken)


def test_choose_threshold():
    scores = [0.1, 0.2, 0.8, 0.9]
    labels = [False, False, True, True]
    t = choose_threshold(scores, labels)
    assert accuracy_at(scores, labels, t) == 1.0
    assert choose_threshold([0.5], [True]) == -np.inf


def test_roc_curve():
    fpr, tpr = roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    pts = list(zip(fpr, tpr))
    assert (0.0, 0.0) in pts and (0.0, 1.0) in pts and (1.0, 1.0) in pts
    s = np.random.default_rng(0).random(400)
    y = np.random.default_rng(1).random(400) < 0.5
    fpr, tpr = roc_curve(s, y)
    assert len(fpr) <= len(np.unique(s)) + 2
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    assert abs(roc_auc(fpr, tpr) - 0.5) < 0.05
    with pytest.raises(ProtocolError):
        roc_curve([0.1, 0.2], [1, 1])


# -- pairs files --------------------------------------------------------------------

def test_pairs_round_trip(tmp_path):
    folds = [[Pair(lfw_ref("Ann", 1), lfw_ref("Ann", 2), True),
              Pair(lfw_ref("Bob", 3), lfw_ref("Cy_D", 1), False)] for _ in range(3)]
    p = tmp_path / "pairs.txt"
    write_pairs(folds, p)
    assert p.read_text().splitlines()[:3] == ["3\t1", "Ann\t1\t2", "Bob\t3\tCy_D\t1"]
    assert parse_pairs(p) == folds
    p.write_text("300\nA 1 2\n")
    with pytest.raises(ParseError):
        parse_pairs(p)
    p.write_text("1 1\nA 1 2\nB 1 C\n")
    with pytest.raises(ParseError) as err:
        parse_pairs(p)
    assert err.value.line == 3


def test_exclusions(tmp_path):
    p = tmp_path / "excl.txt"
    p.write_text("# labeling errors\nAnn/Ann_0002\n\n")
    folds = [[Pair("Ann/Ann_0001", "Ann/Ann_0002", True), Pair("Bob/Bob_0001", "Cy/Cy_0001", False)]]
    kept = filter_pairs(folds, load_exclusions(p))
    assert kept == [[folds[0][1]]]


# -- identification -----------------------------------------------------------------

def test_gallery_probe_split():
    entries = [("a", f"a{i}") for i in range(7)] + [("b", f"b{i}") for i in range(5)]
    split = split_gallery_probe(entries)
    assert [r for _, r in split.gallery] == [f"a{i}" for i in range(5)] + [f"b{i}" for i in range(5)]
    assert split.probe == [("a", "a5"), ("a", "a6")]
    with pytest.raises(ProtocolError):
        split_gallery_probe([])


def clusters(subjects=20, per=8, sep=5.0, sigma=1.0, dim=16, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(subjects, dim))
    centers *= sep * sigma * 2 / np.linalg.norm(centers, axis=1, keepdims=True)
    entries, feats = [], {}
    for s in range(subjects):
        for i in range(per):
            ref = f"s{s}_{i}"
            entries.append((f"s{s}", ref))
            feats[ref] = centers[s] + rng.normal(0, sigma, dim)
    return entries, feats


def euclid_scorer(a, b):
    return -((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)


def test_exact_match_rank1():
    entries, feats = clusters()
    split = split_gallery_probe(entries)
    # every probe duplicates one of its subject's gallery images
    for k, (s, ref) in enumerate(split.probe):
        feats[ref] = feats[split.gallery[5 * int(s[1:]) + k % 5][1]]
    rep = identify(split, feats, scorer=cosine_matrix)
    assert rep.rank1 == 1.0


def test_synthetic_clusters_identification():
    entries, feats = clusters(sep=5.0)
    rep = identify(split_gallery_probe(entries), feats, scorer=euclid_scorer)
    assert rep.rank1 >= 0.95
    assert rep.rank1 == rep.cms[0]
    assert np.all(np.diff(rep.cms) >= 0) and rep.cms[-1] == 1.0
    assert len(rep.cms) == 20


@given(st.integers(0, 500))
@settings(max_examples=20, deadline=None)
def test_cms_properties_and_relabeling(seed):
    entries, feats = clusters(subjects=6, per=7, sep=0.5, seed=seed)
    split = split_gallery_probe(entries)
    rep = identify(split, feats)
    assert np.all(np.diff(rep.cms) >= 0) and rep.cms[-1] == 1.0
    rename = {f"s{k}": f"z{(k * 7) % 6}" for k in range(6)}
    relabeled = split_gallery_probe([(rename[s], r) for s, r in entries])
    # continuous features: ties have probability zero, so renaming cannot change ranks
    assert identify(relabeled, feats).ranks == rep.ranks


def test_identify_tie_order_and_aggregation():
    gallery = [("a", "g1"), ("b", "g2")]
    split = split_gallery_probe(gallery + [("a", "p1"), ("b", "p2")], gallery_per_subject=1)
    feats = {"g1": np.array([1.0, 0]), "g2": np.array([1.0, 0]), "p1": np.array([1.0, 0]),
             "p2": np.array([1.0, 0])}
    rep = identify(split, feats)
    assert rep.ranks == [1, 2]
    entries = [("a", "a1"), ("a", "a2"), ("b", "b1"), ("b", "b2"), ("a", "pa")]
    split = split_gallery_probe(entries, gallery_per_subject=2)
    f = {"a1": np.array([1.0, 0]), "a2": np.array([-1.0, 0]), "b1": np.array([0.6, 0.8]),
         "b2": np.array([0.6, 0.8]), "pa": np.array([1.0, 0])}
    assert identify(split, f, aggregate="max").rank1 == 1.0
    assert identify(split, f, aggregate="mean").rank1 == 0.0


def test_identify_errors():
    split = split_gallery_probe([("a", "g"), ("b", "p1"), ("b", "p2")], gallery_per_subject=1)
    split.probe.append(("c", "p3"))
    with pytest.raises(ProtocolError, match="absent"):
        identify(split, {})
    split = split_gallery_probe([("a", "g"), ("a", "p")], gallery_per_subject=1)
    with pytest.raises(ProtocolError, match="no feature"):
        identify(split, {"g": np.ones(2)})


# -- report files ---------------------------------------------------------------------

def test_report_round_trip(tmp_path):
    folds = make_folds()
    ver = verify_tenfold(folds, scorer=table_scorer(random_table(folds, informative=1.0)))
    paths = emit_report(ver, tmp_path / "ver")
    lines = paths[1].read_text().splitlines()
    assert lines[0] == "fpr,tpr" and len(lines) == len(ver.roc_fpr) + 1
    back = parse_report(tmp_path / "ver")
    assert back == ver
    emit_report(back, tmp_path / "again")
    for suffix in (".json", ".roc.csv"):
        assert (tmp_path / f"again{suffix}").read_bytes() == (tmp_path / f"ver{suffix}").read_bytes()

    entries, feats = clusters(subjects=5, per=7, sep=1.0)
    ident = identify(split_gallery_probe(entries), feats)
    emit_report(ident, tmp_path / "id", figures=True)
    rows = (tmp_path / "id.cms.csv").read_text().splitlines()
    assert rows[0] == "rank,rate"
    assert [int(r.split(",")[0]) for r in rows[1:]] == [1, 2, 3, 4, 5]
    assert parse_report(tmp_path / "id") == ident
    assert (tmp_path / "id.png").stat().st_size > 0


def test_report_mismatch_and_io_errors(tmp_path):
    rep = IdentificationReport([0.5, 1.0], 0.5, [1, 2])
    emit_report(rep, tmp_path / "r")
    (tmp_path / "r.cms.csv").write_text("rank,rate\n1,0.5\n3,1.0\n")
    with pytest.raises(ParseError):
        parse_report(tmp_path / "r")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(DataError):
        emit_report(VerificationReport([1.0], 1.0, 0.0, [0.0]), blocker / "sub" / "x")
