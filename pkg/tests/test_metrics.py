import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nfseg.errors import ContractViolation
from nfseg.metrics import (
    CSV_HEADER,
    MetricsReport,
    confusion_matrix,
    f_from_iou,
    f_score,
    iou,
)


def loop_scores(pred, truth, K=6):
    """Per-class TP/FP/FN by scanning pixels one at a time."""
    tp, fp, fn = [0] * K, [0] * K, [0] * K
    for p, t in zip(pred.ravel(), truth.ravel()):
        if p == t:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    return np.array(tp), np.array(fp), np.array(fn)


masks = arrays(np.uint8, (5, 7), elements=st.integers(0, 5))


def test_perfect_prediction():
    m = np.array([[0, 1], [2, 5]])
    per, macro, agg = iou(confusion_matrix(m, m))
    assert macro == 1.0 and agg == 1.0
    assert np.isnan(per[3]) and np.isnan(per[4])


def test_disjoint_prediction():
    truth = np.zeros((3, 3), int)
    pred = np.ones((3, 3), int)
    per, macro, agg = iou(confusion_matrix(pred, truth))
    assert per[0] == 0 and per[1] == 0 and macro == 0 and agg == 0


def test_small_example_by_hand():
    truth = np.array([0, 0, 1, 1])
    pred = np.array([0, 1, 1, 1])
    per, macro, agg = iou(confusion_matrix(pred, truth))
    np.testing.assert_allclose(per[:2], [1 / 2, 2 / 3])
    assert macro == pytest.approx(7 / 12)
    assert agg == pytest.approx(3 / 5)
    fper, fmacro, fagg = f_score(confusion_matrix(pred, truth))
    np.testing.assert_allclose(fper[:2], [2 / 3, 4 / 5])
    assert fagg == pytest.approx(3 / 4)


@settings(max_examples=200)
@given(masks, masks)
def test_against_pixel_loop(pred, truth):
    tp, fp, fn = loop_scores(pred, truth)
    per, _, agg = iou(confusion_matrix(pred, truth))
    defined = tp + fp + fn > 0
    np.testing.assert_allclose(per[defined], tp[defined] / (tp + fp + fn)[defined])
    assert np.isnan(per[~defined]).all()
    assert agg == pytest.approx(tp.sum() / (tp.sum() + fp.sum() + fn.sum()))
    fper, _, fagg = f_score(confusion_matrix(pred, truth))
    np.testing.assert_allclose(fper[defined], 2 * tp[defined] / (2 * tp + fp + fn)[defined])


@settings(max_examples=200)
@given(masks, masks)
def test_pooled_f_matches_pooled_iou(pred, truth):
    conf = confusion_matrix(pred, truth)
    _, _, agg_iou = iou(conf)
    _, _, agg_f = f_score(conf)
    assert agg_f == pytest.approx(float(f_from_iou(agg_iou)), abs=1e-12)
    # every pixel is counted once as TP or once each as FP and FN
    acc = np.trace(conf) / conf.sum()
    assert agg_iou == pytest.approx(acc / (2 - acc))


@settings(max_examples=100)
@given(masks, masks, st.randoms(use_true_random=False))
def test_invariant_under_shared_permutation(pred, truth, rnd):
    order = list(range(pred.size))
    rnd.shuffle(order)
    a = confusion_matrix(pred, truth)
    b = confusion_matrix(pred.ravel()[order], truth.ravel()[order])
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("iou_value,f_value", [(0.689, 0.816), (0.725, 0.840),
                                               (0.758, 0.862), (0.760, 0.863)])
def test_f_from_iou_reported_pairs(iou_value, f_value):
    assert abs(float(f_from_iou(iou_value)) - f_value) <= 0.001


def test_out_of_range_classes_rejected():
    with pytest.raises(ContractViolation):
        confusion_matrix(np.array([6]), np.array([0]))
    with pytest.raises(ContractViolation):
        confusion_matrix(np.array([0, 1]), np.array([0]))


def test_report_csv_and_table():
    truth = np.array([[0, 0], [1, 2]])
    pred = np.array([[0, 1], [1, 2]])
    rep = MetricsReport.from_confusion(confusion_matrix(pred, truth), params=10, seed=3,
                                       runtime_s=1.5)
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",") == CSV_HEADER
    row = dict(zip(CSV_HEADER, lines[1].split(",")))
    assert row["pixels"] == "4" and row["params"] == "10" and row["seed"] == "3"
    assert row["iou_5"] == "nan" and row["runtime_s"] == "1.500"
    assert rep.csv_row(include_runtime=False).endswith(",")
    assert float(row["aggregate_iou"]) == pytest.approx(3 / 5)
    table = rep.table(["a", "b", "c", "d", "e", "f"])
    assert "aggregate" in table and "macro mean" in table
