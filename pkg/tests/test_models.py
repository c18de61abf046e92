import math

import numpy as np
import pytest

from app.core.exceptions import GeometryError, InputValidationError
from app.models import (
    Assignment, BoundingBox, Detection, DetectionSource, MotRecord, TrackFeature,
    TrajectorySet, boxes_to_array, center, iou, iou_matrix
)


@pytest.mark.parametrize("a, b, expected", [
    ((0, 0, 10, 10), (0, 0, 10, 10), 1.0),
    ((0, 0, 10, 10), (20, 20, 5, 5), 0.0),
    ((0, 0, 10, 10), (5, 0, 10, 10), 50.0 / 150.0),
    ((0, 0, 10, 10), (10, 0, 10, 10), 0.0),
])
def test_iou_examples(a, b, expected):
    assert iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(expected, abs=1e-12)


def test_iou_symmetric_and_bounded():
    rng = np.random.default_rng(3)
    for _ in range(500):
        a = BoundingBox(*rng.uniform(0, 100, 2), *rng.uniform(1, 50, 2))
        b = BoundingBox(*rng.uniform(0, 100, 2), *rng.uniform(1, 50, 2))
        value = iou(a, b)
        assert value == iou(b, a)
        assert 0.0 <= value <= 1.0


def test_iou_matrix_agrees_with_scalar_iou():
    rng = np.random.default_rng(5)
    a = [BoundingBox(*rng.uniform(0, 60, 2), *rng.uniform(5, 40, 2)) for _ in range(6)]
    b = [BoundingBox(*rng.uniform(0, 60, 2), *rng.uniform(5, 40, 2)) for _ in range(4)]
    matrix = iou_matrix(boxes_to_array(a), boxes_to_array(b))
    for i, box_a in enumerate(a):
        for j, box_b in enumerate(b):
            assert matrix[i, j] == pytest.approx(iou(box_a, box_b), abs=1e-12)


def test_iou_matrix_empty_shapes():
    assert boxes_to_array([]).shape == (0, 4)
    assert iou_matrix(boxes_to_array([]), boxes_to_array([BoundingBox(0, 0, 1, 1)])).shape == (0, 1)


def test_center():
    assert center(BoundingBox(10, 20, 30, 40)) == (25.0, 40.0)


@pytest.mark.parametrize("values", [
    (0, 0, 0, 10),
    (0, 0, 10, -1),
    (math.nan, 0, 10, 10),
    (0, math.inf, 10, 10),
])
def test_invalid_box_rejected(values):
    with pytest.raises(GeometryError):
        BoundingBox(*values)


def test_clamp_to_shifts_inside_frame():
    box = BoundingBox(-20, 1050, 100, 100).clamp_to(1920, 1080)
    assert box.as_tuple() == (0.0, 980.0, 100.0, 100.0)


def test_clamp_to_caps_oversized_box():
    box = BoundingBox(0, 0, 3000, 50).clamp_to(1920, 1080)
    assert box.w == 1920.0


def test_union_and_contains_point():
    union = BoundingBox(0, 0, 10, 10).union(BoundingBox(20, 5, 10, 10))
    assert union.as_tuple() == (0.0, 0.0, 30.0, 15.0)
    assert union.contains_point(30.0, 15.0)
    assert not union.contains_point(30.1, 15.0)


@pytest.mark.parametrize("confidence", [-0.1, 1.5])
def test_detection_confidence_range(confidence):
    with pytest.raises(InputValidationError):
        Detection(1, BoundingBox(0, 0, 10, 10), confidence)


def test_detection_source_needs_matching_roi():
    box = BoundingBox(0, 0, 10, 10)
    with pytest.raises(InputValidationError):
        Detection(1, box, 0.9, source=DetectionSource.LOCAL)
    with pytest.raises(InputValidationError):
        Detection(1, box, 0.9, roi_id=3)
    with pytest.raises(InputValidationError):
        Detection(0, box, 0.9)


def test_track_record_velocity_and_direction(track_factory):
    track = track_factory([(0.0, 0.0), (3.0, 4.0), (3.0, 4.0)])
    assert track.history[1].velocity == (3.0, 4.0)
    assert track.history[2].velocity == (0.0, 0.0)
    # A zero displacement keeps the last known heading.
    assert track.last_direction == pytest.approx(math.atan2(4.0, 3.0))
    assert track.mean_speed == pytest.approx(2.5)
    assert track.hits == 3
    track.record(Detection(4, BoundingBox.from_center(9.0, 12.0, 20.0, 20.0), 0.9))
    assert track.mean_speed == pytest.approx(5.0)


def test_track_history_is_bounded_and_strictly_increasing(track_factory):
    track = track_factory([(float(k), 0.0) for k in range(12)], h_max=5)
    assert len(track.history) == 5
    assert [e.frame for e in track.history] == [8, 9, 10, 11, 12]
    with pytest.raises(InputValidationError):
        track.record(Detection(12, BoundingBox(0, 0, 5, 5), 0.9))


def test_mark_missed_resets_hits(track_factory):
    track = track_factory([(0.0, 0.0), (1.0, 0.0)])
    track.mark_missed()
    assert (track.hits, track.misses) == (0, 1)


def test_assignment_partitions_indices():
    assignment = Assignment.from_pairs([(1, 0)], n_rows=3, n_cols=2)
    assert assignment.unmatched_tracks == (0, 2)
    assert assignment.unmatched_detections == (1,)


def test_track_feature_validation():
    TrackFeature(0, 0, 0.5, 0.5, 1, 1, math.pi, 1.0)
    with pytest.raises(ValueError):
        TrackFeature(0, 0, 0.5, 0.5, 1, 1, 0.0, 0.0)
    with pytest.raises(ValueError):
        TrackFeature(0, 0, 1.5, 0.5, 1, 1, 0.0, 0.5)
    with pytest.raises(ValueError):
        TrackFeature(0, 0, 0.5, 0.5, 1, 1, -math.pi, 0.5)


def test_trajectory_set_rejects_duplicate_ids():
    traj = TrajectorySet()
    traj.add(1, 7, BoundingBox(0, 0, 5, 5))
    with pytest.raises(InputValidationError):
        traj.add(1, 7, BoundingBox(10, 0, 5, 5))


def test_trajectory_set_relabel():
    traj = TrajectorySet()
    traj.add(1, 1, BoundingBox(0, 0, 5, 5))
    traj.add(2, 2, BoundingBox(5, 0, 5, 5))
    relabeled = traj.relabel({1: 10})
    assert relabeled.ids() == [2, 10]
    assert relabeled.count() == traj.count()


def test_mot_record_line():
    record = MotRecord(3, -1, 100.0, 200.0, 30.0, 30.0, 0.9)
    assert record.to_line() == "3,-1,100.000000,200.000000,30.000000,30.000000,0.900000,-1,-1,-1"
    assert record.is_detection
