"""Pixel-level scoring of binary change maps."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .raster_io import GroundTruthMask


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    excluded_pixels: int
    precision: float
    recall: float
    f1: float
    iou: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den > 0 else (0.0, True)


def from_counts(tp: int, fp: int, fn: int, tn: int = 0, excluded: int = 0) -> MetricsReport:
    """Build a report from confusion counts.

    A zero denominator yields 0 for that metric and sets ``degenerate``.
    """
    p, dp = _ratio(tp, tp + fp)
    r, dr = _ratio(tp, tp + fn)
    f1, df = _ratio(tp, tp + 0.5 * (fp + fn))
    iou, di = _ratio(tp, tp + fp + fn)
    return MetricsReport(int(tp), int(fp), int(fn), int(tn), int(excluded),
                         p, r, f1, iou, dp or dr or df or di)


def f1_from_pr(precision: float, recall: float) -> float:
    if precision + recall <= 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def iou_from_f1(f1: float) -> float:
    return f1 / (2.0 - f1)


def score(pred, gt: GroundTruthMask | np.ndarray) -> MetricsReport:
    """Compare a boolean prediction with labels; label -1 pixels are skipped."""
    mask = np.asarray(getattr(pred, "mask", pred), dtype=bool)
    labels = np.asarray(getattr(gt, "labels", gt))
    if mask.shape != labels.shape:
        raise ValueError(f"prediction {mask.shape} and ground truth {labels.shape} differ in shape")
    valid = labels != -1
    truth = labels == 1
    tp = np.count_nonzero(mask & truth & valid)
    fp = np.count_nonzero(mask & ~truth & valid)
    fn = np.count_nonzero(~mask & truth & valid)
    tn = np.count_nonzero(~mask & ~truth & valid)
    return from_counts(tp, fp, fn, tn, np.count_nonzero(~valid))


@dataclass
class AggregateReport:
    """Macro averages (primary) alongside metrics of the pooled counts."""

    n: int
    precision: float
    recall: float
    f1: float
    iou: float
    pooled: MetricsReport

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate(reports: list[MetricsReport]) -> AggregateReport:
    if not reports:
        raise ValueError("nothing to aggregate")
    macro = {k: float(np.mean([getattr(r, k) for r in reports]))
             for k in ("precision", "recall", "f1", "iou")}
    pooled = from_counts(*(sum(getattr(r, k) for r in reports)
                           for k in ("tp", "fp", "fn", "tn", "excluded_pixels")))
    return AggregateReport(len(reports), pooled=pooled, **macro)


def write_report_json(report, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)


def write_table_csv(rows: dict[str, MetricsReport], path, average: bool = True) -> None:
    """One row per site: R, P, F1, IoU in percent, plus an Average row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site", "R", "P", "F1", "IoU"])
        for site, r in rows.items():
            w.writerow([site] + [f"{100 * v:.2f}" for v in (r.recall, r.precision, r.f1, r.iou)])
        if average and rows:
            a = aggregate(list(rows.values()))
            w.writerow(["Average"] + [f"{100 * v:.2f}" for v in (a.recall, a.precision, a.f1, a.iou)])


REPORT_FIELDS = [f.name for f in fields(MetricsReport)]
