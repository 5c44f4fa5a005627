"""Smoke tests for the _finnet extension module.

Heavy training paths are covered by the C++ suites; these verify that the
bindings round-trip data correctly and agree with reference values.
"""

import numpy as np
import pytest

import _finnet as fn


def test_iou_hand_cases():
    a = (0.0, 0.0, 10.0, 10.0)
    assert fn.iou(a, a) == pytest.approx(1.0, abs=1e-12)
    assert fn.iou(a, (20.0, 20.0, 30.0, 30.0)) == 0.0
    assert fn.iou(a, (5.0, 5.0, 15.0, 15.0)) == pytest.approx(1.0 / 7.0, abs=1e-12)


def test_nms_orders_and_suppresses():
    hi = ((0.0, 0.0, 10.0, 10.0), 0.9)
    lo = ((1.0, 1.0, 11.0, 11.0), 0.5)
    far = ((50.0, 50.0, 60.0, 60.0), 0.7)
    kept = fn.nms([lo, hi, far], 0.45)
    assert [score for _, score in kept] == [0.9, 0.7]


def test_average_precision_perfect_and_undefined():
    gts = [(0, (0.0, 0.0, 10.0, 10.0))]
    assert fn.average_precision_50([(0, (0.0, 0.0, 10.0, 10.0), 0.9)], gts) == pytest.approx(1.0)
    assert fn.average_precision_50([], []) is None


def test_moving_average():
    assert fn.moving_average([1.0, 2.0, 3.0, 4.0], 2) == pytest.approx([1.0, 1.5, 2.5, 3.5])


def test_synthetic_classification_shapes_and_determinism():
    ds = fn.generate_synthetic_classification(3, 2, 48, 7)
    assert ds.class_names == ["species_00", "species_01", "species_02"]
    assert len(ds.images) == 6
    img = ds.images[0].pixels
    assert img.shape == (48, 48, 3) and img.dtype == np.uint8
    again = fn.generate_synthetic_classification(3, 2, 48, 7)
    assert np.array_equal(img, again.images[0].pixels)


def test_synthetic_detection_boxes_inside_frame():
    ds = fn.generate_synthetic_detection(4, 64, 2, 3, min_fish=1, max_fish=3)
    for im in ds.images:
        assert 1 <= len(im.boxes) <= 3
        for x0, y0, x1, y1 in im.boxes:
            assert 0 <= x0 < x1 <= 64 and 0 <= y0 < y1 <= 64
        assert all(0 <= c < 2 for c in im.box_classes)


def test_network_classify_probability_row():
    net = fn.Network(classes=4, seed=1)
    assert net.parameter_count() > 0
    # SE networks have strictly more parameters than the ablated build
    assert net.parameter_count() > fn.network_parameter_count(4, False)
    frame = np.full((60, 60, 3), 120, dtype=np.uint8)
    # an untrained network has no batch-norm statistics yet
    with pytest.raises(fn.FinnetError):
        net.classify(frame)


def test_pretrain_and_checkpoint_roundtrip(tmp_path):
    ds = fn.generate_synthetic_classification(2, 3, 48, 5)
    fn.split_dataset(ds, 0.5, 0.5, 0.0, seed=5)
    out = str(tmp_path / "clf.fnck")
    result = fn.pretrain(ds, epochs=1, batch_size=4, seed=5, checkpoint_out=out)
    assert result["selected_epoch"] == 1
    assert len(result["history"]) == 1
    meta = fn.checkpoint_metadata(out)
    assert meta["kind"] == "classifier"
    assert meta["class_names"] == "species_00,species_01"
    net = fn.load_network(out)
    arg, probs = net.classify(ds.images[0].pixels)
    assert arg in (0, 1)
    assert sum(probs) == pytest.approx(1.0, abs=1e-5)


def test_bad_image_shape_rejected():
    net = fn.Network(classes=2, seed=0)
    with pytest.raises(fn.FinnetError):
        net.classify(np.zeros((10, 10), dtype=np.uint8))
