import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from costtrack.cvlf import make_index_map
from costtrack.head import (BoundingBox, LossWeights, TrackingHead, assign_labels, bce_loss,
                            cell_centers, giou, giou_xyxy, head_forward, iou, regression_loss, total_loss)
from costtrack.tensor import Tensor
from conftest import grad_check
import oracles

coord = st.floats(-50, 50, allow_nan=False)
extent = st.floats(0.01, 40, allow_nan=False)
boxes = st.builds(BoundingBox, coord, coord, extent, extent)


def test_giou_worked_examples():
    assert giou(BoundingBox(3, 4, 5, 6), BoundingBox(3, 4, 5, 6)) == pytest.approx(1.0, abs=1e-12)
    assert giou(BoundingBox(0, 0, 1, 1), BoundingBox(1, 0, 1, 1)) == pytest.approx(0.0, abs=1e-12)
    assert giou(BoundingBox(0, 0, 1, 1), BoundingBox(9, 0, 1, 1)) == pytest.approx(-0.8, abs=1e-12)


def test_zero_area_pair_scores_zero():
    assert giou(BoundingBox(1, 1, 0, 0), BoundingBox(5, 5, 0, 0)) == 0.0


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_giou_properties(a, b):
    g = giou(a, b)
    assert g == pytest.approx(giou(b, a), abs=1e-12)
    assert g <= iou(a, b) + 1e-12
    assert -1.0 < g <= 1.0
    assert giou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou(a, b) == pytest.approx(oracles.box_iou_xywh(a.as_list(), b.as_list()), abs=1e-12)


def test_giou_gradients_away_from_degeneracies():
    rng = np.random.default_rng(0)
    for _ in range(5):
        # overlapping boxes with distinct corners, so no max/min ties
        a = np.concatenate([rng.uniform(0, 1, 2), rng.uniform(1.5, 3, 2)])
        b = np.concatenate([rng.uniform(0, 1, 2), rng.uniform(1.5, 3, 2)])
        assert np.all(np.abs(a - b) > 1e-6)
        pa, pb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        assert grad_check(lambda x, y: giou_xyxy(x, y), [pa, pb]) < 1e-4


def test_box_validation():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, -1, 1)
    with pytest.raises(ValueError):
        BoundingBox(float("nan"), 0, 1, 1)
    b = BoundingBox.from_center(5, 5, 2, 4)
    assert b.as_list() == [4, 3, 2, 4] and b.center == (5, 5) and b.size == pytest.approx(math.sqrt(8))


def test_zero_weight_head():
    rng = np.random.default_rng(0)
    head = TrackingHead(8, rng)
    for p in head.parameters():
        p.data[:] = 0.0
    out = head_forward(rng.normal(size=(2, 5, 8)), head)
    np.testing.assert_array_equal(out.confidence.data, np.full((2, 5), 0.5))
    np.testing.assert_array_equal(out.boxes.data, np.full((2, 5, 4), 0.5))


def test_central_block_labels():
    im = make_index_map(400, 40)
    labels = assign_labels(im, BoundingBox(8, 8, 4, 4), 20.0)
    assert labels.sum() == 16 and len(labels) == 441
    grid = labels[:400].reshape(20, 20)
    assert grid[8:12, 8:12].all()


def _brute_labels(side, box, region):
    out = []
    for r in range(side):
        for c in range(side):
            x, y = (c + 0.5) * region / side, (r + 0.5) * region / side
            out.append(float(box[0] <= x < box[0] + box[2] and box[1] <= y < box[1] + box[3]))
    return np.array(out)


def test_labels_match_brute_force():
    rng = np.random.default_rng(1)
    im = make_index_map(100, 20)
    for _ in range(1000):
        box = [rng.uniform(-10, 70), rng.uniform(-10, 70), rng.uniform(0, 40), rng.uniform(0, 40)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            labels = assign_labels(im, BoundingBox(*box), 64.0)
        np.testing.assert_array_equal(labels[:100], _brute_labels(10, box, 64.0))
        assert not labels[100:].any()


def test_label_edge_cases():
    im = make_index_map(100, 20)
    assert assign_labels(im, BoundingBox(0, 0, 64, 64), 64.0)[:100].all()
    assert assign_labels(im, BoundingBox(30, 30, 0, 0), 64.0).sum() == 0
    with pytest.warns(UserWarning):
        assert assign_labels(im, BoundingBox(100, 100, 5, 5), 64.0).sum() == 0


def test_cell_centers():
    np.testing.assert_allclose(cell_centers(2, 8.0), [[2, 2], [6, 2], [2, 6], [6, 6]])


def test_bce_values():
    assert float(bce_loss([1.0], [1.0]).data) == pytest.approx(0.0, abs=1e-6)
    assert float(bce_loss([0.5], [1.0]).data) == pytest.approx(math.log(2), abs=1e-12)
    v = float(bce_loss([1.0], [0.0]).data)
    assert math.isfinite(v) and v == pytest.approx(16.118, abs=1e-3)
    assert float(bce_loss([0.5, 0.5], [1, 0], "sum").data) == pytest.approx(2 * math.log(2))
    with pytest.raises(ValueError):
        bce_loss([0.5], [1.0], "max")


def test_regression_loss():
    w = LossWeights()
    gt = np.array([0.5, 0.5, 0.4, 0.4])
    labels = np.array([0.0, 1.0, 0.0])
    perfect = np.tile(gt, (3, 1))
    assert float(regression_loss(perfect, gt, labels, w).data) == pytest.approx(0.0, abs=1e-12)
    pred = perfect.copy()
    pred[1] = [0.5, 0.5, 0.2, 0.2]
    # L1 = 0.4; IoU = 0.04 / 0.16 = 0.25 with the enclosing box equal to the union
    assert float(regression_loss(pred, gt, labels, w).data) == pytest.approx(5 * 0.4 + 2 * 0.75, abs=1e-12)
    with pytest.warns(UserWarning):
        assert float(regression_loss(pred, gt, np.zeros(3), w).data) == 0.0


def test_regression_gradients():
    rng = np.random.default_rng(2)
    pred = Tensor(rng.uniform(0.3, 0.7, size=(2, 3, 4)), requires_grad=True)
    gt = rng.uniform(0.3, 0.7, size=(2, 4))
    labels = np.array([[1, 0, 1], [0, 1, 0]])
    assert grad_check(lambda p: regression_loss(p, gt, labels, LossWeights()), [pred]) < 1e-4


def test_total_loss():
    w = LossWeights()
    assert float(total_loss(0.5, 1.0, 0.7, w).data) == pytest.approx(2.2)
    assert float(total_loss(0.0, 0.0, 0.0, w).data) == 0.0
    assert float(total_loss(0.5, 1.0, 0.7, LossWeights(alpha=0.0)).data) == pytest.approx(1.5)
    with pytest.raises(FloatingPointError):
        total_loss(float("nan"), 0.0, 0.0, w)
    with pytest.raises(ValueError):
        LossWeights(l1=-1).validate()
