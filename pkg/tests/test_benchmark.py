import json
import logging
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from costtrack.benchmark.attributes import (ATTRIBUTE_NAMES, AttributeSchemaError, AttributeSet, all_slice_keys,
                                            box_flags, brightness_level, length_level)
from costtrack.benchmark.dataset import (AbsentFrameError, DatasetError, SequenceAnnotation,
                                         average_relative_speed, is_small_object, load_dataset, load_sequence,
                                         relative_speed, relative_speeds, validate_dataset, write_sequence)
from costtrack.benchmark.metrics import (aggregate, attribute_report, box_iou, compute_metrics,
                                         complete_iou, slice_report)
from costtrack.benchmark.report import (build_report, format_rows, read_report, summary_rows, validate_report,
                                        write_curves, write_report)
from costtrack.benchmark.synth import SynthConfig, generate_sequence, generate_synthetic
import oracles


def _ann(boxes, ts=None, absent=None, attrs=None, seq_id="s"):
    boxes = np.asarray(boxes, dtype=float)
    n = len(boxes)
    return SequenceAnnotation(seq_id, [f"{i}.png" for i in range(n)], boxes,
                              np.zeros(n, bool) if absent is None else absent,
                              np.arange(n, dtype=float) if ts is None else ts, "x", attrs or AttributeSet())


# -- statistics ----------------------------------------------------------------------
def test_relative_speed_examples():
    assert relative_speed(_ann([[5, 5, 10, 10], [5, 5, 10, 10]]), 1) == 0.0
    assert relative_speed(_ann([[0, 0, 10, 10], [20, 0, 10, 10]]), 1) == pytest.approx(2.0)
    # sizes 4 and 9 (geometric mean 6), centre displacement 12, dt 2
    a = _ann([[0, 0, 4, 4], [12 - 2.5, 0 - 2.5, 9, 9]], ts=np.array([0.0, 2.0]))
    assert relative_speed(a, 1) == pytest.approx(1.0)


def test_relative_speed_errors():
    a = _ann([[0, 0, 4, 4], [1, 1, 4, 4]], absent=np.array([False, True]))
    with pytest.raises(AbsentFrameError):
        relative_speed(a, 1)
    with pytest.raises(IndexError):
        relative_speed(a, 0)
    with pytest.raises(ValueError):
        relative_speed(_ann([[0, 0, 0, 4], [1, 1, 4, 4]]), 1)
    assert len(relative_speeds(a.boxes, a.absent, a.timestamps)) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.1, 10))
def test_relative_speed_scale_invariant(seed, k):
    b = np.random.default_rng(seed).uniform(1, 50, size=(6, 4))
    a1, a2 = _ann(b), _ann(b * k)
    assert average_relative_speed(a1) == pytest.approx(average_relative_speed(a2), rel=1e-9)
    assert average_relative_speed(a1) >= 0
    vec = relative_speeds(b, np.zeros(6, bool), np.arange(6.0))
    np.testing.assert_allclose(vec, [relative_speed(a1, t) for t in range(1, 6)], rtol=1e-12)


def test_small_object_examples():
    side = lambda s: [[0, 0, s, s]]
    assert is_small_object(side(13.8), (1280, 720)).is_small
    assert not is_small_object(side(67.6), (1280, 720)).is_small
    # 21 px absolute but 2% of a tiny frame: the relative condition fails
    d = is_small_object([[0, 0, 21, 21]], (21 * math.sqrt(50), 21 * math.sqrt(50)))
    assert d.mean_relative_size == pytest.approx(0.02) and not d.is_small
    with pytest.raises(ValueError):
        is_small_object(_ann([[0, 0, 5, 5]], absent=np.array([True])), (100, 100))


# -- attributes -------------------------------------------------------------------------
def test_attribute_row_round_trip():
    a = AttributeSet(CM=1, FM=1, BRI="low", LEN="long")
    assert AttributeSet.from_row(a.to_row()) == a
    assert len(a.to_row().split(",")) == len(ATTRIBUTE_NAMES) == 17
    assert set(a.slices()) == {"CM", "FM", "BRI=low", "LEN=long"}
    assert len(all_slice_keys()) == 15 + 6
    for bad in ("1,2", ",".join(["2"] * 17), ",".join(["0"] * 12 + ["dim"] + ["0"] * 3 + ["short"])):
        with pytest.raises(AttributeSchemaError):
            AttributeSet.from_row(bad)


def test_attribute_levels_and_box_flags():
    assert [brightness_level(b) for b in (50, 100, 200)] == ["low", "med", "high"]
    assert [length_level(n) for n in (80, 1000, 2500)] == ["short", "med", "long"]
    boxes = np.array([[0, 0, 10, 10], [30, 0, 10, 10], [30, 0, 30, 10]], float)
    flags = box_flags(boxes, np.zeros(3, bool), np.arange(3.0))
    assert flags == {"FM": 1, "SV": 0, "ARV": 1}


# -- metrics -------------------------------------------------------------------------
def test_worked_metric_values():
    gt = np.array([[0.0, 0.0, 2.0, 1.0]])
    half = compute_metrics(np.array([[0.0, 0.0, 1.0, 1.0]]), (gt, np.array([False])))
    assert half.auc == 50 / 101
    perfect = compute_metrics(gt, (gt, np.array([False])))
    assert perfect.auc == 100 / 101 and perfect.precision == 1.0 and perfect.norm_precision == 1.0
    assert perfect.macc == 1.0
    disjoint = compute_metrics(np.array([[10.0, 10.0, 2.0, 1.0]]), (gt, np.array([False])))
    assert disjoint.auc == 0.0 and disjoint.macc == 0.0


def _random_run(rng):
    n = int(rng.integers(1, 40))
    gt = np.column_stack([rng.uniform(0, 100, (n, 2)), rng.uniform(2, 30, (n, 2))])
    pred = gt + rng.normal(0, rng.uniform(0.5, 20), (n, 4))
    pred[:, 2:] = np.abs(pred[:, 2:])
    absent = rng.uniform(size=n) < 0.15
    absent[0] = False
    pred[absent & (rng.uniform(size=n) < 0.5)] = 0.0
    return pred, gt, absent


def test_metrics_equal_naive_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        pred, gt, absent = _random_run(rng)
        rep = compute_metrics(pred, (gt, absent))
        auc, p20, pn, cauc, macc, curves = oracles.metrics_naive(pred.tolist(), gt.tolist(), absent.tolist())
        assert (rep.auc, rep.precision, rep.norm_precision, rep.cauc, rep.macc) == (auc, p20, pn, cauc, macc)
        assert list(rep.success_curve) == curves["success"]
        assert list(rep.precision_curve) == curves["precision"]
        assert list(rep.norm_precision_curve) == curves["norm"]
        assert list(rep.complete_success_curve) == curves["complete"]


def test_curves_monotone_and_bounded():
    rng = np.random.default_rng(7)
    for _ in range(20):
        pred, gt, absent = _random_run(rng)
        r = compute_metrics(pred, (gt, absent))
        assert np.all(np.diff(r.success_curve) <= 0) and np.all(np.diff(r.precision_curve) >= 0)
        assert np.all(np.diff(r.norm_precision_curve) >= 0) and np.all(np.diff(r.complete_success_curve) <= 0)
        for k in r.SCALARS:
            assert 0.0 <= getattr(r, k) <= 1.0


def test_box_iou_matches_scalar_and_ciou_bounds():
    rng = np.random.default_rng(3)
    a = np.column_stack([rng.uniform(0, 20, (50, 2)), rng.uniform(0.5, 10, (50, 2))])
    b = np.column_stack([rng.uniform(0, 20, (50, 2)), rng.uniform(0.5, 10, (50, 2))])
    np.testing.assert_allclose(box_iou(a, b), [oracles.box_iou_xywh(x, y) for x, y in zip(a, b)], atol=1e-15)
    c = complete_iou(a, b)
    assert np.all(c <= box_iou(a, b) + 1e-12) and np.all(c >= -1)
    np.testing.assert_allclose(complete_iou(a, a), 1.0)


def test_metric_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        compute_metrics(np.zeros((2, 4)), (np.ones((3, 4)), np.zeros(3, bool)))


def test_absence_credit():
    gt = np.array([[0, 0, 4, 4], [0, 0, 0, 0]], float)
    r = compute_metrics(np.array([[0, 0, 4, 4], [0, 0, 0, 0]], float), (gt, np.array([False, True])))
    assert r.macc == 1.0 and r.n_visible == 1
    r = compute_metrics(np.array([[0, 0, 4, 4], [1, 1, 3, 3]], float), (gt, np.array([False, True])))
    assert r.macc == 0.5


# -- attribute slices ----------------------------------------------------------------
def _reports():
    gt = np.array([[0, 0, 2, 1]], float)
    r1 = compute_metrics(gt, (gt, np.array([False])))
    r2 = compute_metrics(np.array([[0, 0, 1, 1]], float), (gt, np.array([False])))
    return {"a": r1, "b": r2}


def test_shared_attribute_equals_global():
    reps = _reports()
    attrs = {"a": AttributeSet(FM=1), "b": AttributeSet(FM=1)}
    sl = attribute_report(reps, attrs)
    glob = aggregate(reps.values())
    assert sl["FM"].scalars() == glob.scalars()


def test_hand_partitioned_slices(caplog):
    reps = _reports()
    attrs = {"a": AttributeSet(FM=1, BRI="low"), "b": AttributeSet(SV=1, BRI="low")}
    with caplog.at_level(logging.INFO):
        sl = attribute_report(reps, attrs)
    assert sl["FM"].auc == 100 / 101 and sl["SV"].auc == 50 / 101
    assert sl["BRI=low"].auc == pytest.approx((100 / 101 + 50 / 101) / 2, abs=1e-15)
    assert "CM" not in sl and "empty" in caplog.text
    assert slice_report(reps, attrs, "SV").auc == 50 / 101
    with pytest.raises(KeyError, match="schema"):
        slice_report(reps, attrs, "XYZ")
    with pytest.raises(KeyError):
        attribute_report(reps, {"a": AttributeSet()})


# -- dataset I/O ---------------------------------------------------------------------
def _write_fixture(root: Path):
    seq = root / "fixture"
    (seq / "frames").mkdir(parents=True)
    from PIL import Image
    for i in (1, 2):
        Image.fromarray(np.full((6, 8, 3), 40 * i, np.uint8)).save(seq / "frames" / f"{i:06d}.png")
    (seq / "groundtruth.txt").write_text("1,2,3,4\n0,0,0,0\n")
    (seq / "absent.txt").write_text("0\n1\n")
    (seq / "timestamps.txt").write_text("0\n0.5\n")
    (seq / "language.txt").write_text("a tiny grey box\n")
    (seq / "attributes.txt").write_text("1,0,0,0,0,0,0,0,0,0,1,0,low,0,0,0,short\n")
    return seq


def test_two_frame_fixture(tmp_path):
    seq = _write_fixture(tmp_path)
    a = load_sequence(seq)
    assert a.seq_id == "fixture" and len(a) == 2 and a.frame_size == (8, 6)
    np.testing.assert_array_equal(a.boxes, [[1, 2, 3, 4], [0, 0, 0, 0]])
    assert list(a.absent) == [False, True] and list(a.timestamps) == [0.0, 0.5]
    assert a.language == "a tiny grey box"
    assert a.attributes == AttributeSet(CM=1, NAO=1, BRI="low", LEN="short")


def test_truncated_groundtruth_names_file_and_count(tmp_path):
    seq = _write_fixture(tmp_path)
    (seq / "groundtruth.txt").write_text("1,2,3,4\n")
    with pytest.raises(DatasetError) as e:
        load_sequence(seq)
    assert "groundtruth.txt" in str(e.value) and "expected 2" in str(e.value)


def test_malformed_files(tmp_path):
    seq = _write_fixture(tmp_path)
    (seq / "absent.txt").write_text("0\n2\n")
    with pytest.raises(DatasetError, match="absent.txt:2"):
        load_sequence(seq)
    (seq / "absent.txt").write_text("0\n1\n")
    (seq / "timestamps.txt").write_text("1\n1\n")
    with pytest.raises(DatasetError, match="increasing"):
        load_sequence(seq)
    (seq / "timestamps.txt").unlink()
    (seq / "attributes.txt").write_text("1,0\n")
    with pytest.raises(DatasetError, match="attributes.txt"):
        load_sequence(seq)


def test_write_load_round_trip_and_validate(tmp_path):
    ann, frames, _ = generate_sequence(SynthConfig(seed=1, n_frames=5, frame_width=64, frame_height=48,
                                                   target_size=6), "round")
    write_sequence(tmp_path / "round", ann, frames)
    back = load_sequence(tmp_path / "round")
    np.testing.assert_allclose(back.boxes, ann.boxes, atol=5e-5)
    np.testing.assert_array_equal(back.absent, ann.absent)
    assert back.language == ann.language and back.attributes == ann.attributes
    rep = validate_dataset(tmp_path)
    assert rep.ok and "round" in rep.summary()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "missing")


# -- synthetic generator -------------------------------------------------------------
def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_generation_is_byte_identical(tmp_path):
    cfg = SynthConfig(seed=9, n_frames=4, frame_width=80, frame_height=60, target_size=8)
    generate_synthetic(tmp_path / "a", cfg, 2)
    generate_synthetic(tmp_path / "b", cfg, 2)
    a, b = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
    assert a == b and len(a) > 0
    generate_synthetic(tmp_path / "c", SynthConfig(seed=10, n_frames=4, frame_width=80, frame_height=60,
                                                   target_size=8), 2)
    assert _tree_bytes(tmp_path / "c") != a


def test_generated_sequences_are_small_and_consistent():
    ann, frames, info = generate_sequence(SynthConfig(seed=3, n_frames=20), "g")
    assert len(frames) == len(ann) == 20 and frames[0].dtype == np.uint8
    assert is_small_object(ann, ann.frame_size).is_small
    assert ann.boxes[0, 2] > 0 and not ann.absent[0]
    assert np.all(ann.boxes[ann.absent] == 0)
    assert ann.attributes.NAO == 1


def test_generator_speed_calibration():
    speeds = {}
    for regime in ("generic", "high-speed"):
        vals = [average_relative_speed(generate_sequence(SynthConfig(seed=s, regime=regime, n_frames=40))[0])
                for s in range(6)]
        speeds[regime] = np.mean(vals)
    assert 0.4 <= speeds["generic"] <= 1.2
    assert speeds["high-speed"] >= 3 * speeds["generic"]


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(seed=0, regime="slow").validate()


# -- reports -------------------------------------------------------------------------
def test_report_schema_round_trip(tmp_path):
    reps = _reports()
    attrs = {"a": AttributeSet(FM=1), "b": AttributeSet()}
    report = build_report(aggregate(reps.values()), reps, attribute_report(reps, attrs))
    validate_report(report)
    write_report(tmp_path / "r.json", report)
    back = read_report(tmp_path / "r.json")
    assert back == json.loads(json.dumps(report))
    paths = write_curves(tmp_path / "curves", report)
    assert paths and paths[0].read_text().startswith("threshold,value")
    csv = format_rows(summary_rows(back, attributes=True), "csv")
    assert csv.splitlines()[0].split(",")[:2] == ["slice", "auc"] or "auc" in csv.splitlines()[0]
    json.loads(format_rows(summary_rows(back), "json"))
    bad = dict(report)
    bad.pop("overall")
    with pytest.raises(Exception):
        validate_report(bad)
