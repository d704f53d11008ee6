import numpy as np
import pytest

from ccdf.dataio import CHANGED, UNCHANGED, UNDEFINED, ReferenceMap
from ccdf.metrics import (
    ConfusionMatrix,
    accumulate_confusion,
    compute_metrics,
    evaluation_report,
)


def brute_force_counts(pred, labels):
    """Per-pixel Python loop, independent of the vectorized implementation."""
    tp = fp = tn = fn = 0
    for i in range(labels.shape[0]):
        for j in range(labels.shape[1]):
            if labels[i, j] == UNDEFINED:
                continue
            predicted = bool(pred[i, j])
            actual = labels[i, j] == CHANGED
            if predicted and actual:
                tp += 1
            elif predicted and not actual:
                fp += 1
            elif not predicted and actual:
                fn += 1
            else:
                tn += 1
    return tp, fp, tn, fn


def brute_force_metrics(tp, fp, tn, fn):
    n = tp + fp + tn + fn
    oa = (tp + tn) / n
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    ciou = tp / (tp + fp + fn) if tp + fp + fn else 0.0
    uiou = tn / (tn + fp + fn) if tn + fp + fn else 0.0
    miou = (ciou + uiou) / 2
    p_e = ((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)) / n ** 2
    kc = (oa - p_e) / (1 - p_e) if p_e != 1 else 0.0
    return dict(oa=oa, kc=kc, precision=precision, recall=recall, f1=f1, miou=miou, ciou=ciou)


def test_hand_counted_confusion():
    labels = np.array([[CHANGED, CHANGED, UNCHANGED, UNCHANGED, UNDEFINED]], dtype=np.uint8)
    pred = np.array([[1, 0, 0, 1, 1]])
    cm = accumulate_confusion(pred, ReferenceMap(labels))
    assert (cm.tp, cm.fn, cm.tn, cm.fp) == (1, 1, 1, 1)


def test_perfect_prediction_no_errors():
    labels = np.array([[CHANGED, UNCHANGED], [UNCHANGED, CHANGED]], dtype=np.uint8)
    pred = (labels == CHANGED).astype(int)
    cm = accumulate_confusion(pred, ReferenceMap(labels))
    assert cm.fp == 0 and cm.fn == 0
    metrics = compute_metrics(cm)
    for name in ("oa", "kc", "precision", "recall", "f1", "miou", "ciou"):
        assert getattr(metrics, name) == pytest.approx(1.0)


def test_all_undefined_reference_errors():
    labels = np.full((4, 4), UNDEFINED, dtype=np.uint8)
    with pytest.raises(ValueError):
        accumulate_confusion(np.zeros((4, 4)), ReferenceMap(labels))


def test_shape_mismatch():
    labels = np.full((4, 4), UNCHANGED, dtype=np.uint8)
    with pytest.raises(ValueError):
        accumulate_confusion(np.zeros((4, 5)), ReferenceMap(labels))


def test_hand_derived_metric_values():
    metrics = compute_metrics(ConfusionMatrix(tp=1, fp=1, tn=1, fn=1))
    assert metrics.oa == pytest.approx(0.5)
    assert metrics.precision == pytest.approx(0.5)
    assert metrics.recall == pytest.approx(0.5)
    assert metrics.f1 == pytest.approx(0.5)
    assert metrics.ciou == pytest.approx(1 / 3)
    assert metrics.miou == pytest.approx(1 / 3)
    assert metrics.kc == pytest.approx(0.0)
    percent = metrics.as_percent()
    assert percent["oa"] == 50.00
    assert percent["kc"] == 0.00
    assert percent["f1"] == 50.00
    assert percent["ciou"] == 33.33


def test_against_brute_force_oracle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        labels = rng.choice([CHANGED, UNCHANGED, UNDEFINED], size=(64, 64),
                            p=[0.25, 0.6, 0.15]).astype(np.uint8)
        if not (labels != UNDEFINED).any():
            continue
        pred = rng.integers(0, 2, size=(64, 64))
        cm = accumulate_confusion(pred, ReferenceMap(labels))
        tp, fp, tn, fn = brute_force_counts(pred, labels)
        assert (cm.tp, cm.fp, cm.tn, cm.fn) == (tp, fp, tn, fn)
        expected = brute_force_metrics(tp, fp, tn, fn)
        got = compute_metrics(cm)
        for name, value in expected.items():
            assert abs(getattr(got, name) - value) <= 1e-9, name


def test_pixel_order_invariance():
    rng = np.random.default_rng(5)
    labels = rng.choice([CHANGED, UNCHANGED, UNDEFINED], size=(32, 32)).astype(np.uint8)
    pred = rng.integers(0, 2, size=(32, 32))
    perm = rng.permutation(32 * 32)
    cm_a = accumulate_confusion(pred, ReferenceMap(labels))
    cm_b = accumulate_confusion(pred.ravel()[perm].reshape(32, 32),
                                ReferenceMap(labels.ravel()[perm].reshape(32, 32)))
    assert cm_a == cm_b


def test_f1_is_harmonic_mean():
    rng = np.random.default_rng(6)
    for _ in range(100):
        tp, fp, tn, fn = (int(v) for v in rng.integers(1, 500, size=4))
        m = compute_metrics(ConfusionMatrix(tp, fp, tn, fn))
        harmonic = 2 * m.precision * m.recall / (m.precision + m.recall)
        assert abs(m.f1 - harmonic) <= 1e-12


def test_ciou_bounded_by_precision_and_recall():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        tp, fp, tn, fn = (int(v) for v in rng.integers(0, 200, size=4))
        if tp + fp + tn + fn == 0:
            continue
        m = compute_metrics(ConfusionMatrix(tp, fp, tn, fn))
        if "precision" not in m.degenerate and "recall" not in m.degenerate:
            assert m.ciou <= min(m.precision, m.recall) + 1e-12


def test_metric_ranges():
    rng = np.random.default_rng(8)
    for _ in range(300):
        tp, fp, tn, fn = (int(v) for v in rng.integers(0, 100, size=4))
        if tp + fp + tn + fn == 0:
            continue
        m = compute_metrics(ConfusionMatrix(tp, fp, tn, fn))
        for name in ("oa", "precision", "recall", "f1", "miou", "ciou"):
            assert 0.0 <= getattr(m, name) <= 1.0
        assert -1.0 <= m.kc <= 1.0


def test_kc_zero_when_agreement_matches_chance():
    # symmetric confusion: observed accuracy equals chance agreement
    for k in (1, 3, 10):
        m = compute_metrics(ConfusionMatrix(tp=k, fp=k, tn=k, fn=k))
        assert m.kc == pytest.approx(0.0, abs=1e-12)


def test_zero_denominator_flags():
    m = compute_metrics(ConfusionMatrix(tp=0, fp=0, tn=10, fn=0))
    assert m.precision == 0.0 and m.recall == 0.0
    assert {"precision", "recall", "f1", "ciou", "miou", "kc"} <= m.degenerate


def test_confusion_addition():
    a = ConfusionMatrix(1, 2, 3, 4)
    b = ConfusionMatrix(10, 20, 30, 40)
    assert a + b == ConfusionMatrix(11, 22, 33, 44)


def test_evaluation_report_structure():
    labels = np.array([[CHANGED, UNCHANGED], [UNDEFINED, CHANGED]], dtype=np.uint8)
    pred = np.array([[1, 0], [1, 1]])
    report = evaluation_report(pred, ReferenceMap(labels))
    assert report["counts"] == {"tp": 2, "fp": 0, "tn": 1, "fn": 0}
    assert set(report["metrics_percent"]) == {"oa", "kc", "precision", "recall", "f1", "miou", "ciou"}
    assert report["metrics_percent"]["oa"] == 100.0
