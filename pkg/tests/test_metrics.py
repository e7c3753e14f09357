import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clvae.metrics import (aggregate, f1_from_pr, from_counts, iou_from_f1, score,
                           write_report_json, write_table_csv)
from clvae.raster_io import GroundTruthMask


def test_perfect_prediction():
    gt = np.array([[0, 1], [1, 0]])
    r = score(gt == 1, GroundTruthMask(gt))
    assert (r.precision, r.recall, r.f1, r.iou) == (1.0, 1.0, 1.0, 1.0)
    assert not r.degenerate


def test_missing_labels_excluded():
    gt = np.array([[1, -1], [0, -1]])
    pred = np.array([[True, True], [False, False]])
    r = score(pred, gt)
    assert (r.tp, r.fp, r.fn, r.tn, r.excluded_pixels) == (1, 0, 0, 1, 2)
    assert r.tp + r.fp + r.fn + r.tn + r.excluded_pixels == gt.size


def test_table_row_reproduction():
    # site row with R = 77.9 %, P = 93.8 %
    f1 = f1_from_pr(0.938, 0.779)
    assert abs(100 * f1 - 85.1) <= 0.05
    assert abs(100 * iou_from_f1(f1) - 74.1) <= 0.05


def test_all_negative_is_degenerate():
    r = score(np.zeros((4, 4), bool), np.zeros((4, 4), int))
    assert (r.precision, r.recall, r.f1, r.iou) == (0.0, 0.0, 0.0, 0.0)
    assert r.degenerate


def test_shape_mismatch():
    with pytest.raises(ValueError):
        score(np.zeros((2, 2), bool), np.zeros((2, 3), int))


counts = st.integers(0, 10_000)


@given(counts, counts, counts, counts)
def test_iou_f1_identity(tp, fp, fn, tn):
    r = from_counts(tp, fp, fn, tn)
    assert r.iou <= r.f1
    if r.f1 > 0:
        assert r.iou == pytest.approx(r.f1 / (2 - r.f1), abs=1e-12)
        assert r.f1 == pytest.approx(f1_from_pr(r.precision, r.recall), abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    pred = rng.random((8, 8)) > 0.5
    gt = rng.integers(-1, 2, size=(8, 8))
    perm = rng.permutation(64)
    a = score(pred, gt)
    b = score(pred.ravel()[perm].reshape(8, 8), gt.ravel()[perm].reshape(8, 8))
    assert a == b


def test_aggregate_examples():
    r = from_counts(3, 1, 2, 10)
    assert aggregate([r]).f1 == r.f1
    a, b = from_counts(2, 3, 3), from_counts(3, 1, 1)  # F1 0.4 and 0.75
    assert aggregate([a, b]).f1 == pytest.approx((0.4 + 0.75) / 2)
    c, d = from_counts(4, 6, 6), from_counts(6, 4, 4)  # F1 0.4 and 0.6
    assert aggregate([c, d]).f1 == pytest.approx(0.5)


def test_macro_differs_from_pooled():
    # a tiny perfect site and a large poor one
    small, big = from_counts(1, 0, 0), from_counts(10, 90, 0)
    agg = aggregate([small, big])
    assert agg.f1 == pytest.approx((1 + 10 / 55) / 2)
    assert agg.pooled.f1 == pytest.approx(11 / 56)
    assert agg.f1 != pytest.approx(agg.pooled.f1)


def test_writers(tmp_path):
    r = from_counts(5, 1, 2, 20)
    write_report_json(r, tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["tp"] == 5
    write_table_csv({"a": r, "b": from_counts(1, 1, 1)}, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "site,R,P,F1,IoU" and lines[-1].startswith("Average")
