"""Generalized zero-shot evaluation by calibrated stacking.

A scalar bias is added to every unseen-class score. As the bias grows the
top-1 prediction of a sample flips from its best seen class to its best
unseen class exactly once, at ``max_seen - max_unseen``. Sweeping over those
critical values visits every distinct operating point, so no bias grid is
needed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

import numpy as np

from .errors import DegeneratePartition, EmptyGroup


@dataclass(frozen=True)
class CurvePoint:
    bias: float
    seen_acc: float
    unseen_acc: float


@dataclass(frozen=True)
class GzslCurve:
    points: tuple[CurvePoint, ...]

    @property
    def seen(self) -> np.ndarray:
        return np.array([p.seen_acc for p in self.points])

    @property
    def unseen(self) -> np.ndarray:
        return np.array([p.unseen_acc for p in self.points])

    def pairs(self) -> set[tuple[float, float]]:
        return {(p.seen_acc, p.unseen_acc) for p in self.points}

    def to_tsv(self) -> str:
        out = ["bias\tseen_acc\tunseen_acc"]
        out += [f"{p.bias!r}\t{p.seen_acc!r}\t{p.unseen_acc!r}" for p in self.points]
        return "\n".join(out) + "\n"


@dataclass(frozen=True)
class MetricsRow:
    best_seen: float
    best_unseen: float
    best_hm: float
    auc: float


def _validate(scores: np.ndarray, unseen_mask: np.ndarray):
    scores = np.asarray(scores, dtype=np.float64)
    unseen_mask = np.asarray(unseen_mask, dtype=bool)
    if scores.ndim != 2 or scores.shape[1] != unseen_mask.shape[0]:
        raise ValueError(f"scores {scores.shape} do not match {unseen_mask.shape[0]} classes")
    if unseen_mask.all() or not unseen_mask.any():
        raise DegeneratePartition("need at least one seen and one unseen class")
    return scores, unseen_mask


def biased_predictions(scores: np.ndarray, unseen_mask: np.ndarray, bias: float) -> np.ndarray:
    """Top-1 class per row after adding ``bias`` to unseen columns (ties: lowest index)."""
    if bias == math.inf:
        masked = np.where(unseen_mask, scores, -np.inf)
    elif bias == -math.inf:
        masked = np.where(unseen_mask, -np.inf, scores)
    else:
        masked = scores + bias * unseen_mask
    return masked.argmax(axis=1)


def group_accuracy(
    scores,
    labels,
    group: np.ndarray,
    unseen_mask: np.ndarray,
    bias: float,
    class_averaged: bool = False,
) -> float:
    """Top-1 accuracy over the samples whose true class is in ``group``.

    ``group`` and ``unseen_mask`` are boolean masks over classes; prediction is
    always over all classes.
    """
    scores, unseen_mask = np.asarray(scores, float), np.asarray(unseen_mask, bool)
    labels = np.asarray(labels, dtype=np.int64)
    in_group = np.asarray(group, bool)[labels]
    if not in_group.any():
        raise EmptyGroup("no test samples in group")
    correct = biased_predictions(scores, unseen_mask, bias) == labels
    if not class_averaged:
        return float(correct[in_group].mean())
    accs = [correct[labels == c].mean() for c in np.unique(labels[in_group])]
    return float(np.mean(accs))


# flips closer than this (relative to the score scale) are one regime; they
# arise when scores tie in exact arithmetic but round differently
TIE_TOL = 1e-10


def _flip_clusters(scores: np.ndarray, unseen_mask: np.ndarray) -> list[tuple[float, float]]:
    flips = np.sort(scores[:, ~unseen_mask].max(axis=1) - scores[:, unseen_mask].max(axis=1))
    tol = TIE_TOL * max(1.0, float(np.abs(scores).max()))
    clusters: list[list[float]] = []
    for b in flips.tolist():
        if clusters and b - clusters[-1][0] <= tol:
            clusters[-1][1] = b
        else:
            clusters.append([b, b])
    return [(lo, hi) for lo, hi in clusters]


def critical_biases(scores, unseen_mask) -> list[float]:
    """Sorted per-sample flip points ``max_seen - max_unseen``, float ties merged."""
    scores, unseen_mask = _validate(scores, unseen_mask)
    return [lo for lo, _ in _flip_clusters(scores, unseen_mask)]


def evaluation_points(critical: Sequence[float]) -> list[float]:
    """One bias per prediction regime: -inf, midpoints, +inf."""
    mids = [0.5 * (a + b) for a, b in zip(critical[:-1], critical[1:])]
    return [-math.inf, *mids, math.inf]


def bias_sweep(scores, labels, unseen_mask, class_averaged: bool = False) -> GzslCurve:
    scores, unseen_mask = _validate(scores, unseen_mask)
    clusters = _flip_clusters(scores, unseen_mask)
    mids = [0.5 * (a[1] + b[0]) for a, b in zip(clusters[:-1], clusters[1:])]
    points = []
    for b in [-math.inf, *mids, math.inf]:
        s = group_accuracy(scores, labels, ~unseen_mask, unseen_mask, b, class_averaged)
        u = group_accuracy(scores, labels, unseen_mask, unseen_mask, b, class_averaged)
        points.append(CurvePoint(b, s, u))
    return GzslCurve(tuple(points))


def harmonic_mean(s: float, u: float) -> float:
    return 0.0 if s + u == 0 else 2.0 * s * u / (s + u)


def best_hm(curve: GzslCurve) -> float:
    return max(harmonic_mean(p.seen_acc, p.unseen_acc) for p in curve.points)


def auc_from_pairs(pairs: Iterable[tuple[float, float]]) -> float:
    """Trapezoidal area of seen accuracy over unseen accuracy.

    ``pairs`` are (seen_acc, unseen_acc). The saturation endpoints
    (unseen 0, seen max) and (unseen max, seen 0) are always included.
    """
    pairs = list(pairs)
    seen_max = max(s for s, _ in pairs)
    unseen_max = max(u for _, u in pairs)
    pts = set(pairs) | {(seen_max, 0.0), (0.0, unseen_max)}
    ordered = sorted(pts, key=lambda p: (p[1], -p[0]))
    area = 0.0
    for (s0, u0), (s1, u1) in zip(ordered[:-1], ordered[1:]):
        area += (u1 - u0) * (s0 + s1) / 2.0
    return area


def auc(curve: GzslCurve) -> float:
    return auc_from_pairs((p.seen_acc, p.unseen_acc) for p in curve.points)


def metrics_row(curve: GzslCurve) -> MetricsRow:
    return MetricsRow(
        best_seen=float(curve.seen.max()),
        best_unseen=float(curve.unseen.max()),
        best_hm=best_hm(curve),
        auc=auc(curve),
    )


def check_bounds(row: MetricsRow, tol: float = 1e-12) -> list[str]:
    """Violated consistency bounds of a metrics row (empty when consistent)."""
    problems = []
    if row.best_hm > harmonic_mean(row.best_seen, row.best_unseen) + tol:
        problems.append("best_hm exceeds hm(best_seen, best_unseen)")
    if row.auc > row.best_seen * row.best_unseen + tol:
        problems.append("auc exceeds best_seen * best_unseen")
    return problems


def evaluate(scores, labels, unseen_mask, class_averaged: bool = False):
    curve = bias_sweep(scores, labels, unseen_mask, class_averaged)
    row = metrics_row(curve)
    problems = check_bounds(row)
    if problems:
        raise AssertionError("; ".join(problems))
    return curve, row


# ------------------------------------------------------------------ reports

COLUMNS = ("Seen", "Unseen", "HM", "AUC")


def pct(x: float) -> str:
    """Percentage with one decimal, half-up: 0.4556 -> '45.6'."""
    d = Decimal(repr(float(x))) * 100
    return str(d.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _cells(row: MetricsRow) -> list[str]:
    return [pct(row.best_seen), pct(row.best_unseen), pct(row.best_hm), pct(row.auc)]


def report_csv(rows: Sequence[tuple[str, MetricsRow]]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["Method", *COLUMNS])
    for name, row in rows:
        w.writerow([name, *_cells(row)])
    return out.getvalue()


def report_markdown(rows: Sequence[tuple[str, MetricsRow]]) -> str:
    lines = ["| Method | " + " | ".join(COLUMNS) + " |", "|---|" + "---:|" * len(COLUMNS)]
    for name, row in rows:
        lines.append(f"| {name} | " + " | ".join(_cells(row)) + " |")
    return "\n".join(lines) + "\n"


def metrics_csv(row: MetricsRow) -> str:
    return (
        "best_seen,best_unseen,best_hm,auc\n"
        f"{row.best_seen!r},{row.best_unseen!r},{row.best_hm!r},{row.auc!r}\n"
    )


def parse_metrics_csv(text: str) -> MetricsRow:
    rows = list(csv.DictReader(io.StringIO(text)))
    r = rows[0]
    return MetricsRow(float(r["best_seen"]), float(r["best_unseen"]),
                      float(r["best_hm"]), float(r["auc"]))
