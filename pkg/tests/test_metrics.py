import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from sarflood.metrics import (
    ConfusionCounts,
    UndefinedRateError,
    compare_metrics,
    confusion,
    gsw_flood_prone,
    metrics_from_counts,
    new_area_pct,
    overlap_stats,
)

from conftest import grid

cells = hnp.arrays(np.uint8, (6, 7), elements=st.sampled_from([0, 1, 255]))


@given(cells, cells, hnp.arrays(bool, (6, 7)))
def test_confusion_matches_loop_count(p, t, ig):
    c = confusion(grid(p, 255), grid(t, 255), ig.astype(np.uint8))
    tp = fp = fn = tn = 0
    for a, b, skip in zip(p.ravel(), t.ravel(), ig.ravel()):
        if a == 255 or b == 255 or skip:
            continue
        tp += a == 1 and b == 1
        fp += a == 1 and b == 0
        fn += a == 0 and b == 1
        tn += a == 0 and b == 0
    assert (c.tp, c.fp, c.fn, c.tn) == (tp, fp, fn, tn)


def test_degenerate_conventions():
    m = metrics_from_counts(ConfusionCounts(0, 0, 0, 10))
    assert (m.precision, m.recall, m.f1, m.iou) == (1.0, 1.0, 1.0, 1.0)
    m = metrics_from_counts(ConfusionCounts(0, 3, 0, 10))
    assert (m.precision, m.recall, m.f1, m.iou) == (0.0, 0.0, 0.0, 0.0)
    m = metrics_from_counts(ConfusionCounts(0, 0, 4, 10))
    assert (m.precision, m.recall, m.f1, m.iou) == (0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 0, 0, 0)


@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_f1_is_harmonic_mean(tp, fp, fn):
    m = metrics_from_counts(ConfusionCounts(tp, fp, fn, 0))
    if tp:
        assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall), rel=1e-12)
        assert m.iou == pytest.approx(m.f1 / (2 - m.f1), rel=1e-12)
    assert 0 <= m.iou <= m.f1 <= 1 or (tp + fp + fn == 0)


def test_counts_add():
    assert ConfusionCounts(1, 2, 3, 4) + ConfusionCounts(1, 1, 1, 1) == ConfusionCounts(2, 3, 4, 5)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        compare_metrics(np.zeros((2, 2)), np.zeros((2, 3)))


def test_gsw_flood_prone():
    occ = np.array([[0, 1, 49.9, 50, 100]], float)
    assert gsw_flood_prone(occ).tolist() == [[False, True, True, False, False]]
    assert gsw_flood_prone(occ, include_zero=True).tolist() == [[True, True, True, False, False]]
    with pytest.raises(ValueError):
        gsw_flood_prone(np.array([[120.0]]))
    r = gsw_flood_prone(grid(np.array([[10, 255]], np.uint8), 255))
    assert r.pixels.tolist() == [[1, 255]]


def test_overlap_and_new_area():
    ours = np.array([[1, 1, 0, 1, 0, 0]])
    ref = np.array([[1, 0, 1, 1, 0, 0]])
    excl = np.array([[0, 0, 0, 1, 0, 0]])
    s = overlap_stats(ours, ref, excl)
    assert s.detection_rate == pytest.approx(2 / 3)
    assert s.detection_rate_outside_mask == pytest.approx(1 / 2)
    # ours outside the union: only column 1; union has 3 pixels
    assert new_area_pct(ours, [ref]) == pytest.approx(100 / 3)
    with pytest.raises(UndefinedRateError):
        overlap_stats(ours, np.zeros_like(ref))
    with pytest.raises(UndefinedRateError):
        overlap_stats(ours, excl, excl)
    with pytest.raises(UndefinedRateError):
        new_area_pct(ours, [np.zeros_like(ref)])


def test_counting_grids():
    ref = np.zeros(200, np.uint8)
    ref[:100] = 1
    ours = np.zeros(200, np.uint8)
    ours[:35] = 1
    excl = np.zeros(200, np.uint8)
    excl[:7] = 1       # 7 hit pixels
    excl[50:63] = 1    # 13 missed reference pixels
    s = overlap_stats(ours, ref, excl)
    assert s.detection_rate == pytest.approx(0.35)
    assert s.detection_rate_outside_mask == pytest.approx(28 / 80)

    ours = ref.copy()
    ours[100:171] = 1
    assert new_area_pct(ours, [ref]) == pytest.approx(71.0)
    assert new_area_pct(ref, [ours]) == 0.0
