"""Tab-separated dataset manifests and per-subject count reports.

One record per line::

    path<TAB>subject<TAB>x1 y1 x2 y2 x3 y3 x4 y4 x5 y5
"""

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mmdfr.errors import DataError, ParseError


@dataclass
class ManifestRecord:
    path: str
    subject: str
    landmarks: np.ndarray  # (5, 2) in original-image pixels

    def __post_init__(self):
        if not self.path:
            raise DataError("manifest record needs a non-empty image path")
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64).reshape(5, 2)
        if not np.all(np.isfinite(self.landmarks)):
            raise DataError(f"{self.path}: landmarks must be finite")


def parse_manifest_line(line, lineno=None):
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 3:
        raise ParseError(f"expected 3 tab-separated fields, got {len(parts)}", line=lineno)
    path, subject, coords = parts
    values = coords.split()
    if len(values) != 10:
        raise ParseError(f"expected exactly 10 landmark coordinates, got {len(values)}", line=lineno)
    try:
        pts = np.array([float(v) for v in values])
    except ValueError:
        raise ParseError(f"non-numeric landmark coordinate in {coords!r}", line=lineno) from None
    if not path or not subject:
        raise ParseError("empty path or subject field", line=lineno)
    try:
        return ManifestRecord(path, subject, pts)
    except DataError as exc:
        raise ParseError(str(exc), line=lineno) from None


def load_manifest(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                records.append(parse_manifest_line(line, i))
    return records


def format_record(rec):
    coords = " ".join(repr(float(v)) for v in rec.landmarks.reshape(-1))
    return f"{rec.path}\t{rec.subject}\t{coords}"


def write_manifest(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if "\t" in rec.path or "\t" in rec.subject or "\n" in rec.path + rec.subject:
                raise DataError(f"{rec.path!r}: tabs and newlines are not allowed in fields")
            fh.write(format_record(rec) + "\n")


def resolve_path(rec, manifest_path):
    """Image paths are relative to the manifest's directory unless absolute."""
    p = Path(rec.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


@dataclass
class DistributionReport:
    counts: list  # (subject, count), descending by count, then file order
    total: int
    minimum: int
    median: float
    maximum: int


def distribution_report(records, multiplicity=1):
    """Per-subject image counts; ``multiplicity`` scales for a fixed augmentation factor."""
    if not records:
        raise DataError("distribution report needs at least one record")
    subjects = [r.subject if hasattr(r, "subject") else r for r in records]
    counter = Counter(subjects)
    order = {s: i for i, s in enumerate(dict.fromkeys(subjects))}
    counts = sorted(((s, c * multiplicity) for s, c in counter.items()),
                    key=lambda sc: (-sc[1], order[sc[0]]))
    values = np.array([c for _, c in counts])
    return DistributionReport(counts, int(values.sum()), int(values.min()),
                              float(np.median(values)), int(values.max()))


def write_distribution(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "subject", "count"])
        for i, (s, c) in enumerate(report.counts, start=1):
            w.writerow([i, s, c])
    return Path(path)


def read_distribution(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["rank", "subject", "count"]:
        raise ParseError(f"{path}: missing distribution header", line=1)
    records = []
    for s, c in ((r[1], int(r[2])) for r in rows[1:]):
        records += [s] * c
    return distribution_report(records)
