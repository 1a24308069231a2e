"""Region-level detection metrics and majority-mapped class metrics.

A region is a true positive when it overlaps some labelled object extent
widened by ``tolerance`` columns on each side. Precision is computed over
regions, recall over labelled objects (an object is found when at least one
region matches it).
"""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


def _ratio(num: int, den: int) -> float:
    # no predictions (or no positives) means nothing was wrong
    return 1.0 if den == 0 else num / den


def overlaps(region: dict, label: dict, tolerance: int = 0) -> bool:
    return (region["col_start"] < label["col_end"] + tolerance
            and region["col_end"] > label["col_start"] - tolerance)


@dataclass
class ScanScore:
    scan_id: str
    tp: int
    fp: int
    fn: int
    positives: int
    precision: float
    recall: float


@dataclass
class ClassScore:
    class_id: int
    kind: str | None
    precision: float
    recall: float
    regions: int


@dataclass
class EvalResult:
    scans: list[ScanScore] = field(default_factory=list)
    precision: float = 1.0  # mean over scans
    recall: float = 1.0
    micro_precision: float = 1.0
    micro_recall: float = 1.0
    classes: list[ClassScore] = field(default_factory=list)
    class_precision_mean: float = float("nan")
    class_precision_std: float = float("nan")
    class_recall_mean: float = float("nan")
    class_recall_std: float = float("nan")
    confusion: dict = field(default_factory=dict)  # class_id -> {kind: regions}
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def match_scan(regions: Sequence[dict], labels: Sequence[dict], tolerance: int):
    """Per region, the index of the best-overlapping label (or None)."""
    out = []
    for r in regions:
        best, best_ov = None, -np.inf
        for j, lab in enumerate(labels):
            if not overlaps(r, lab, tolerance):
                continue
            ov = min(r["col_end"], lab["col_end"]) - max(r["col_start"], lab["col_start"])
            if ov > best_ov:
                best, best_ov = j, ov
        out.append(best)
    return out


def score_scan(scan_id: str, regions, labels, tolerance: int) -> tuple[ScanScore, list]:
    matches = match_scan(regions, labels, tolerance)
    tp = sum(m is not None for m in matches)
    found = {m for m in matches if m is not None}
    # objects are also found by any overlapping region, not just their best match
    for r in regions:
        for j, lab in enumerate(labels):
            if overlaps(r, lab, tolerance):
                found.add(j)
    fn = len(labels) - len(found)
    score = ScanScore(scan_id, tp, len(regions) - tp, fn, len(labels),
                      _ratio(tp, len(regions)), _ratio(len(found), len(labels)))
    return score, matches


def evaluate(reports: Sequence[dict], labels: Sequence[dict], tolerance: int = 290,
             timing: dict | None = None) -> EvalResult:
    """Score detection reports against label records (any scan order).

    ``tolerance`` is window_width - step for the default slide geometry.
    """
    if not labels:
        raise ValueError("labels are empty")
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    by_scan: dict[str, list[dict]] = defaultdict(list)
    for lab in labels:
        by_scan[lab["scan_id"]].append(lab)
    result = EvalResult(timing=dict(timing or {}))
    pairs: list[tuple[int, str | None]] = []  # (class_id, matched kind) for spawned-class regions
    for rep in reports:
        scan_labels = by_scan.get(rep["scan_id"], [])
        regions = rep["regions"]
        score, matches = score_scan(rep["scan_id"], regions, scan_labels, tolerance)
        result.scans.append(score)
        for r, m in zip(regions, matches):
            if r["class_id"] > 0:
                pairs.append((r["class_id"], None if m is None else scan_labels[m]["object_kind"]))
    if not result.scans:
        raise ValueError("no reports to evaluate")
    result.precision = float(np.mean([s.precision for s in result.scans]))
    result.recall = float(np.mean([s.recall for s in result.scans]))
    tp = sum(s.tp for s in result.scans)
    n_regions = sum(s.tp + s.fp for s in result.scans)
    positives = sum(s.positives for s in result.scans)
    result.micro_precision = _ratio(tp, n_regions)
    result.micro_recall = _ratio(positives - sum(s.fn for s in result.scans), positives)
    _class_metrics(result, pairs, reports, by_scan, tolerance)
    return result


def _class_metrics(result: EvalResult, pairs, reports, by_scan, tolerance: int) -> None:
    confusion: dict[int, Counter] = defaultdict(Counter)
    for cls, kind in pairs:
        confusion[cls][kind or "none"] += 1
    kind_totals = Counter(lab["object_kind"] for labs in by_scan.values() for lab in labs)
    for cls in sorted(confusion):
        counts = confusion[cls]
        matched = {k: n for k, n in counts.items() if k != "none"}
        kind = max(sorted(matched), key=lambda k: matched[k]) if matched else None
        regions = sum(counts.values())
        precision = counts[kind] / regions if kind else 0.0
        # recall: objects of the mapped kind touched by at least one region of this class
        hit = 0
        if kind:
            for rep in reports:
                for lab in by_scan.get(rep["scan_id"], []):
                    if lab["object_kind"] == kind and any(
                        r["class_id"] == cls and overlaps(r, lab, tolerance) for r in rep["regions"]
                    ):
                        hit += 1
        recall = _ratio(hit, kind_totals[kind]) if kind else 0.0
        result.classes.append(ClassScore(cls, kind, precision, recall, regions))
    result.confusion = {str(c): dict(sorted(confusion[c].items())) for c in sorted(confusion)}
    if result.classes:
        p = [c.precision for c in result.classes]
        r = [c.recall for c in result.classes]
        result.class_precision_mean, result.class_precision_std = float(np.mean(p)), float(np.std(p))
        result.class_recall_mean, result.class_recall_std = float(np.mean(r)), float(np.std(r))


def load_reports(paths: Sequence[str | Path]) -> list[dict]:
    return [json.loads(Path(p).read_text()) for p in paths]
