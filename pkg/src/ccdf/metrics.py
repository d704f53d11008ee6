"""Seven change-detection metrics over the defined pixels of a tri-state map.

CHANGED is the positive class. Ratios with a zero denominator are reported
as 0 and flagged as degenerate instead of raising, so batch evaluation of
early (often empty) predictions never aborts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import CHANGED, ReferenceMap

METRIC_NAMES = ("oa", "kc", "precision", "recall", "f1", "miou", "ciou")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class MetricSet:
    """Metric values as fractions (kc in [-1, 1], the rest in [0, 1])."""

    oa: float
    kc: float
    precision: float
    recall: float
    f1: float
    miou: float
    ciou: float
    degenerate: frozenset[str] = frozenset()

    def as_percent(self) -> dict[str, float]:
        """All seven metrics in percent, rounded to 2 decimal places."""
        return {name: round(getattr(self, name) * 100.0, 2) for name in METRIC_NAMES}


def accumulate_confusion(pred: np.ndarray, ref: ReferenceMap) -> ConfusionMatrix:
    """Count tp/fp/tn/fn over defined reference pixels only.

    ``pred`` is a binary map (nonzero means changed) of the same shape.
    """
    pred = np.asarray(pred)
    if pred.shape != ref.labels.shape:
        raise ValueError(f"prediction shape {pred.shape} != reference shape {ref.labels.shape}")
    defined = ref.defined_mask
    if not defined.any():
        raise ValueError("reference map has no defined pixels")
    pred_pos = pred.astype(bool)[defined]
    ref_pos = (ref.labels == CHANGED)[defined]
    tp = int(np.count_nonzero(pred_pos & ref_pos))
    fp = int(np.count_nonzero(pred_pos & ~ref_pos))
    fn = int(np.count_nonzero(~pred_pos & ref_pos))
    tn = int(np.count_nonzero(~pred_pos & ~ref_pos))
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def compute_metrics(cm: ConfusionMatrix) -> MetricSet:
    """Overall accuracy, kappa, precision, recall, F1, mean IOU, changed IOU."""
    n = cm.total
    if n == 0:
        raise ValueError("confusion matrix is empty")
    degenerate: set[str] = set()

    def ratio(numerator: float, denominator: float, name: str) -> float:
        if denominator == 0:
            degenerate.add(name)
            return 0.0
        return numerator / denominator

    oa = (cm.tp + cm.tn) / n
    precision = ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = ratio(2.0 * precision * recall, precision + recall, "f1")
    ciou = ratio(cm.tp, cm.tp + cm.fp + cm.fn, "ciou")
    uiou = ratio(cm.tn, cm.tn + cm.fp + cm.fn, "uiou")
    miou = (ciou + uiou) / 2.0
    if "ciou" in degenerate or "uiou" in degenerate:
        degenerate.add("miou")
    p_e = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.tn + cm.fn) * (cm.tn + cm.fp)) / (n * n)
    kc = ratio(oa - p_e, 1.0 - p_e, "kc")
    return MetricSet(oa=oa, kc=kc, precision=precision, recall=recall,
                     f1=f1, miou=miou, ciou=ciou, degenerate=frozenset(degenerate))


def evaluation_report(pred: np.ndarray, ref: ReferenceMap) -> dict:
    """JSON-ready report: metrics in percent (2 d.p.) plus the raw counts."""
    cm = accumulate_confusion(pred, ref)
    metrics = compute_metrics(cm)
    return {
        "metrics_percent": metrics.as_percent(),
        "counts": {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn},
        "degenerate": sorted(metrics.degenerate),
    }
