"""Verification (ten-fold pairs) and closed-set identification protocols."""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mmdfr.errors import DataError, ParseError, ProtocolError
from mmdfr.matching import cosine_matrix

log = logging.getLogger(__name__)

FOLD_COUNT = 10
GALLERY_PER_SUBJECT = 5


@dataclass(frozen=True)
class Pair:
    a: str
    b: str
    same: bool


# -- LFW-style pairs files ------------------------------------------------------

def lfw_ref(name, index):
    return f"{name}/{name}_{int(index):04d}"


def parse_pairs(path):
    """Read a pairs.txt layout: header ``folds n``, then per fold n same and n different lines."""
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines()]
    if not lines:
        raise ParseError(f"{path}: empty pairs file", line=1)
    head = lines[0].split()
    try:
        n_folds, per = (int(v) for v in head) if len(head) == 2 else (1, int(head[0]))
    except ValueError:
        raise ParseError(f"{path}: header must be 'folds pairs-per-fold'", line=1) from None
    folds, cursor = [], 1
    for _ in range(n_folds):
        fold = []
        for same in (True, False):
            for _ in range(per):
                if cursor >= len(lines):
                    raise ParseError(f"{path}: file ends inside fold {len(folds) + 1}", line=cursor + 1)
                parts = lines[cursor].split()
                cursor += 1
                try:
                    if same and len(parts) == 3:
                        fold.append(Pair(lfw_ref(parts[0], parts[1]), lfw_ref(parts[0], parts[2]), True))
                    elif not same and len(parts) == 4:
                        fold.append(Pair(lfw_ref(parts[0], parts[1]), lfw_ref(parts[2], parts[3]), False))
                    else:
                        raise ValueError
                except ValueError:
                    kind = "same (name i j)" if same else "different (name1 i name2 j)"
                    raise ParseError(f"{path}: expected a {kind} pair", line=cursor) from None
        folds.append(fold)
    return folds


def _split_ref(ref):
    name, _, stem = ref.partition("/")
    return name, int(stem.rsplit("_", 1)[1])


def write_pairs(folds, path):
    per = len(folds[0]) // 2
    out = [f"{len(folds)}\t{per}"]
    for fold in folds:
        same = [p for p in fold if p.same]
        diff = [p for p in fold if not p.same]
        if len(same) != per or len(diff) != per:
            raise DataError("every fold needs equal same/different pair counts")
        for p in same:
            (n, i), (_, j) = _split_ref(p.a), _split_ref(p.b)
            out.append(f"{n}\t{i}\t{j}")
        for p in diff:
            (n1, i), (n2, j) = _split_ref(p.a), _split_ref(p.b)
            out.append(f"{n1}\t{i}\t{n2}\t{j}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_exclusions(path):
    """One image ref per line (``#`` comments allowed); pairs touching any are dropped."""
    refs = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            refs.add(line)
    return refs


def filter_pairs(folds, excluded):
    excluded = set(excluded)
    return [[p for p in fold if p.a not in excluded and p.b not in excluded] for fold in folds]


# -- verification ---------------------------------------------------------------

def choose_threshold(scores, labels):
    """Accuracy-maximizing threshold for the rule ``score > t``.

    Candidates are -inf and every distinct training score, so ``t`` is always
    the lower neighbour of the decision gap.  That keeps the decision rank
    based: any strictly increasing transform of all scores selects the same
    partition of held-out pairs.  Ties in accuracy go to the lowest candidate.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if len(s) == 0:
        raise ProtocolError("threshold selection needs at least one training pair")
    values, inverse = np.unique(s, return_inverse=True)
    pos_at = np.bincount(inverse, weights=y, minlength=len(values))
    neg_at = np.bincount(inverse, weights=~y, minlength=len(values))
    # threshold index k: scores <= values[k-1] are "different"; k = 0 means t = -inf
    neg_below = np.concatenate([[0], np.cumsum(neg_at)])
    pos_above = y.sum() - np.concatenate([[0], np.cumsum(pos_at)])
    correct = neg_below + pos_above
    k = int(np.argmax(correct))
    t = -np.inf if k == 0 else float(values[k - 1])
    return t


def accuracy_at(scores, labels, threshold):
    s = np.asarray(scores, dtype=np.float64)
    return float(np.mean((s > threshold) == np.asarray(labels, dtype=bool)))


@dataclass
class VerificationReport:
    fold_accuracy: list
    mean_accuracy: float
    std_error: float
    thresholds: list
    roc_fpr: list = field(default_factory=list)
    roc_tpr: list = field(default_factory=list)
    auc: float = float("nan")
    kind: str = "verification"


def _score_pairs(scorer, pairs):
    try:
        return np.asarray(scorer(pairs), dtype=np.float64)
    except Exception as exc:
        for p in pairs:
            try:
                scorer([p])
            except Exception as inner:
                raise ProtocolError(f"scoring pair ({p.a}, {p.b}) failed: {inner}") from inner
        raise ProtocolError(f"scoring failed: {exc}") from exc


def verify_tenfold(folds, scorer=None, fit=None, chooser=choose_threshold):
    """Leave-one-fold-out verification.

    Either ``scorer(pairs) -> scores`` is fixed, or ``fit(train_pairs)`` returns
    a scorer for each round so trainables see only the held-in folds.  The
    threshold chooser only ever receives held-in scores and labels.
    """
    if len(folds) < 2:
        raise ProtocolError(f"cross-validation needs at least 2 folds, got {len(folds)}")
    if (scorer is None) == (fit is None):
        raise ValueError("pass exactly one of scorer or fit")
    accs, thresholds = [], []
    held_scores, held_labels = [], []
    fixed = None
    if scorer is not None:
        fixed = [_score_pairs(scorer, f) for f in folds]
    for k, test in enumerate(folds):
        train = [p for j, f in enumerate(folds) if j != k for p in f]
        if fixed is not None:
            train_scores = np.concatenate([fixed[j] for j in range(len(folds)) if j != k])
            test_scores = fixed[k]
        else:
            round_scorer = fit(train)
            train_scores = _score_pairs(round_scorer, train)
            test_scores = _score_pairs(round_scorer, test)
        train_labels = np.array([p.same for p in train])
        t = chooser(train_scores, train_labels)
        test_labels = np.array([p.same for p in test])
        accs.append(accuracy_at(test_scores, test_labels, t))
        thresholds.append(float(t))
        held_scores.append(test_scores)
        held_labels.append(test_labels)
    accs = np.array(accs)
    se = float(np.std(accs, ddof=1) / np.sqrt(len(accs)))
    report = VerificationReport(accs.tolist(), float(accs.mean()), se, thresholds)
    s, y = np.concatenate(held_scores), np.concatenate(held_labels)
    if y.any() and not y.all():
        fpr, tpr = roc_curve(s, y)
        report.roc_fpr, report.roc_tpr = fpr.tolist(), tpr.tolist()
        report.auc = roc_auc(fpr, tpr)
    return report


def roc_curve(scores, labels):
    """(fpr, tpr) over every distinct threshold, from (0, 0) to (1, 1)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ProtocolError("ROC needs both same and different pairs")
    values, inverse = np.unique(s, return_inverse=True)
    pos = np.bincount(inverse, weights=y, minlength=len(values))[::-1]
    neg = np.bincount(inverse, weights=~y, minlength=len(values))[::-1]
    tpr = np.concatenate([[0.0], np.cumsum(pos) / n_pos])
    fpr = np.concatenate([[0.0], np.cumsum(neg) / n_neg])
    tpr[-1] = fpr[-1] = 1.0
    pts = np.unique(np.stack([fpr, tpr], axis=1), axis=0)
    return pts[:, 0], pts[:, 1]


def roc_auc(fpr, tpr):
    return float(np.trapezoid(tpr, fpr))


# -- identification ---------------------------------------------------------------

@dataclass
class GalleryProbeSplit:
    gallery: list  # (subject, ref)
    probe: list
    gallery_per_subject: int = GALLERY_PER_SUBJECT


def split_gallery_probe(entries, gallery_per_subject=GALLERY_PER_SUBJECT):
    """File order decides: the first images of each subject form the gallery."""
    entries = [(e.subject, e.path) if hasattr(e, "subject") else tuple(e) for e in entries]
    if not entries:
        raise ProtocolError("cannot split an empty manifest")
    seen = {}
    gallery, probe = [], []
    for subject, ref in entries:
        n = seen.get(subject, 0)
        (gallery if n < gallery_per_subject else probe).append((subject, ref))
        seen[subject] = n + 1
    return GalleryProbeSplit(gallery, probe, gallery_per_subject)


@dataclass
class IdentificationReport:
    cms: list
    rank1: float
    ranks: list = field(default_factory=list)
    kind: str = "identification"


def identify(split, features, scorer=cosine_matrix, aggregate="max"):
    """Nearest-subject identification.

    ``features`` maps ref -> vector; ``scorer(A, B)`` returns the (len A, len B)
    score matrix.  A probe's score for a subject aggregates that subject's
    gallery scores.  Subjects are ordered by first gallery appearance; a
    subject tied with the true one counts against it only if it comes first.
    """
    subjects = list(dict.fromkeys(s for s, _ in split.gallery))
    index = {s: i for i, s in enumerate(subjects)}
    missing = sorted({str(s) for s, _ in split.probe if s not in index})
    if missing:
        raise ProtocolError(f"probe subjects absent from the gallery: {', '.join(missing[:5])}")
    if not split.probe:
        raise ProtocolError("no probe images to identify")
    try:
        G = np.stack([np.asarray(features[r], np.float64) for _, r in split.gallery])
        P = np.stack([np.asarray(features[r], np.float64) for _, r in split.probe])
    except KeyError as exc:
        raise ProtocolError(f"no feature for image {exc.args[0]}") from None
    owner = np.array([index[s] for s, _ in split.gallery])
    raw = np.asarray(scorer(P, G), dtype=np.float64)
    k = len(subjects)
    if aggregate == "max":
        agg = np.full((len(P), k), -np.inf)
        np.maximum.at(agg.T, owner, raw.T)
    elif aggregate == "mean":
        agg = np.zeros((len(P), k))
        np.add.at(agg.T, owner, raw.T)
        agg /= np.bincount(owner, minlength=k)
    else:
        raise ValueError(f"unknown aggregate {aggregate!r}")
    truth = np.array([index[s] for s, _ in split.probe])
    true_score = agg[np.arange(len(P)), truth][:, None]
    earlier = np.arange(k)[None, :] < truth[:, None]
    ranks = 1 + np.sum(agg > true_score, axis=1) + np.sum((agg == true_score) & earlier, axis=1)
    cms = [float(np.mean(ranks <= r)) for r in range(1, k + 1)]
    return IdentificationReport(cms, cms[0], ranks.astype(int).tolist())


# -- report files -----------------------------------------------------------------
# <stem>.json holds every field; <stem>.roc.csv (fpr,tpr) or <stem>.cms.csv (rank,rate)
# carries the curve for plotting.  Floats are written with repr so they round-trip.

def _curve_path(stem, kind):
    return Path(f"{stem}.roc.csv") if kind == "verification" else Path(f"{stem}.cms.csv")


def emit_report(report, stem, figures=False):
    stem = Path(stem)
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        Path(f"{stem}.json").write_text(json.dumps(asdict(report), indent=1) + "\n", encoding="utf-8")
        curve = _curve_path(stem, report.kind)
        with open(curve, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if report.kind == "verification":
                w.writerow(["fpr", "tpr"])
                w.writerows((repr(f), repr(t)) for f, t in zip(report.roc_fpr, report.roc_tpr))
            else:
                w.writerow(["rank", "rate"])
                w.writerows((k, repr(r)) for k, r in enumerate(report.cms, start=1))
    except OSError as exc:
        raise DataError(f"cannot write report {stem}: {exc}") from None
    paths = [Path(f"{stem}.json"), curve]
    if figures:
        from mmdfr import plotting

        paths.append(plotting.plot_report(report, f"{stem}.png"))
    return paths


def parse_report(stem):
    data = json.loads(Path(f"{stem}.json").read_text(encoding="utf-8"))
    kind = data.get("kind")
    if kind == "verification":
        report = VerificationReport(**data)
    elif kind == "identification":
        report = IdentificationReport(**data)
    else:
        raise ParseError(f"{stem}.json: unknown report kind {kind!r}")
    with open(_curve_path(stem, kind), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = ["fpr", "tpr"] if kind == "verification" else ["rank", "rate"]
    if rows[0] != header:
        raise ParseError(f"{stem}: curve header must be {','.join(header)}", line=1)
    if kind == "verification":
        curve = [[float(a), float(b)] for a, b in rows[1:]]
        if curve != [list(p) for p in zip(report.roc_fpr, report.roc_tpr)]:
            raise ParseError(f"{stem}: ROC file disagrees with the summary")
    else:
        ranks = [int(r[0]) for r in rows[1:]]
        if ranks != list(range(1, len(ranks) + 1)) or [float(r[1]) for r in rows[1:]] != report.cms:
            raise ParseError(f"{stem}: CMS file disagrees with the summary")
    return report
