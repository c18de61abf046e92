import itertools
import math

import numpy as np
import pytest

from app.models import BoundingBox, CostMatrix, Detection
from app.services.association import (
    acceleration_cost, blend_costs, cost_dist, cost_iou, cost_motion, cost_rel,
    direction_cost, effective_weights, iou_cost, jcma_cost, solve_assignment, speed_cost
)
from app.services.motion import kf_predict


def _det(frame, cx, cy, w=20.0, h=20.0):
    return Detection(frame, BoundingBox.from_center(cx, cy, w, h), 0.9)


# Component costs

@pytest.mark.parametrize("a, b, expected", [
    ((0, 0, 100, 100), (0, 0, 100, 100), 0.0),
    ((0, 0, 100, 100), (500, 500, 10, 10), 1.0),
    ((0, 0, 100, 100), (50, 0, 100, 100), 1.0 - 1.0 / 3.0),
])
def test_cost_iou(a, b, expected):
    assert cost_iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("offset, expected", [(0.0, 0.0), (50.0, 0.5), (300.0, 1.0)])
def test_cost_dist(offset, expected):
    a = BoundingBox.from_center(100, 100, 50, 50)
    b = BoundingBox.from_center(100 + offset, 100, 50, 50)
    assert cost_dist(a, b) == pytest.approx(expected)


def test_speed_direction_acceleration_terms():
    assert speed_cost(100.0, 0.0) == 1.0
    assert speed_cost(10.0, 10.0) == 0.0
    assert direction_cost(math.pi / 4) == pytest.approx(0.5)
    assert acceleration_cost(15.0) == pytest.approx(0.5)
    assert acceleration_cost(100.0) == 1.0


def test_cost_motion_vanishes_on_consistent_motion(track_factory):
    track = track_factory([(100.0, 100.0), (110.0, 100.0), (120.0, 100.0)])
    assert cost_motion(track, _det(4, 130.0, 100.0)) == pytest.approx(0.0, abs=1e-12)


def test_cost_motion_undefined_for_newborn_track(track_factory):
    track = track_factory([(100.0, 100.0)])
    assert cost_motion(track, _det(2, 400.0, 100.0)) == 0.0


def test_cost_motion_direction_reversal(track_factory):
    track = track_factory([(100.0, 100.0), (110.0, 100.0), (120.0, 100.0)])
    # Same speed, opposite heading: direction cost 1, acceleration |-10 - 10| / 30.
    expected = 0.4 * 0.0 + 0.4 * 1.0 + 0.2 * (20.0 / 30.0)
    assert cost_motion(track, _det(4, 110.0, 100.0)) == pytest.approx(expected)


def test_cost_rel_examples(track_factory):
    track = track_factory([(0.0, 0.0)])
    assert cost_rel(track, _det(2, 10.0, 0.0), [(0.0, 10.0)]) == pytest.approx(1.0 - 1.0 / math.sqrt(2.0))
    assert cost_rel(track, _det(2, 0.0, 0.0), [(40.0, 10.0), (-5.0, 30.0)]) == pytest.approx(0.0, abs=1e-12)
    assert cost_rel(track, _det(2, 10.0, 0.0), []) == 0.0


def test_blend_costs_worked_example(cfg):
    assert blend_costs(0.5, 0.25, 0.5, 0.0, cfg) == pytest.approx(0.325)


def test_effective_weights_move_undefined_mass(cfg):
    weights = effective_weights(cfg, motion_defined=False, relation_defined=False)
    assert sum(weights) == pytest.approx(1.0)
    assert weights[2:] == (0.0, 0.0)
    assert weights[0] == pytest.approx(0.5)


# Joint cost matrix

def test_jcma_perfect_continuation_is_zero(cfg, track_factory):
    track = track_factory([(300.0, 300.0)])
    det = Detection(2, track.predicted_box, 0.9)
    assert jcma_cost([track], [det], cfg).values[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_jcma_disjoint_is_one(cfg, track_factory):
    track = track_factory([(100.0, 100.0), (110.0, 100.0), (120.0, 100.0)])
    # Far away and backwards, with the only other object right between track and detection.
    det = _det(4, -900.0, 100.0)
    between = _det(4, -385.0, 100.0)
    costs = jcma_cost([track], [det, between], cfg).values
    assert costs[0, 0] == pytest.approx(1.0, abs=1e-9)


def _independent_entry(track, dets, j, cfg):
    """Straight-line recomputation of one cost entry for a single-track problem."""
    det = dets[j]
    pred = track.predicted_box
    (pcx, pcy), (dcx, dcy) = pred.center, det.center

    ix = min(pred.x + pred.w, det.box.x + det.box.w) - max(pred.x, det.box.x)
    iy = min(pred.y + pred.h, det.box.y + det.box.h) - max(pred.y, det.box.y)
    inter = ix * iy if ix > 0 and iy > 0 else 0.0
    c_iou = 1.0 - inter / (pred.w * pred.h + det.box.w * det.box.h - inter)

    scale = (pred.w + pred.h + det.box.w + det.box.h) / 4.0 * 2.0
    c_dist = min(1.0, math.hypot(pcx - dcx, pcy - dcy) / scale)

    entries = list(track.history)
    motion_defined = len(entries) >= 2
    c_motion = 0.0
    if motion_defined:
        last = entries[-1]
        gap = max(1, det.frame - last.frame)
        ex, ey = (dcx - last.center[0]) / gap, (dcy - last.center[1]) / gap
        speeds = [math.hypot(*e.velocity) for e in entries if e.has_velocity]
        v_avg = sum(speeds) / len(speeds)
        v_exp = math.hypot(ex, ey)
        c_speed = min(1.0, abs(v_exp - v_avg) / max(50.0, 2.0 + v_avg))
        delta = 0.0
        if v_exp > 0 and track.direction_history:
            delta = math.atan2(ey, ex) - track.direction_history[-1]
            delta = abs(math.atan2(math.sin(delta), math.cos(delta)))
        c_dir = min(1.0, delta / (math.pi / 2))
        c_acc = min(1.0, math.hypot(ex - last.velocity[0], ey - last.velocity[1]) / 30.0)
        b1, b2, b3 = cfg.motion_weights
        c_motion = b1 * c_speed + b2 * c_dir + b3 * c_acc

    others = [d.center for k, d in enumerate(dets) if k != j]
    relation_defined = bool(others)
    c_rel = 0.0
    if relation_defined:
        total = 0.0
        for kx, ky in others:
            u = (kx - pcx, ky - pcy)
            v = (kx - dcx, ky - dcy)
            norm = math.hypot(*u) * math.hypot(*v)
            total += (u[0] * v[0] + u[1] * v[1]) / norm if norm > 0 else 1.0
        c_rel = min(1.0, max(0.0, 1.0 - total / len(others)))

    w1, w2, w3, w4 = cfg.cost_weights
    spare = (0.0 if motion_defined else w3) + (0.0 if relation_defined else w4)
    w1, w2 = w1 + spare * w1 / (w1 + w2), w2 + spare * w2 / (w1 + w2)
    w3 = w3 if motion_defined else 0.0
    w4 = w4 if relation_defined else 0.0
    return w1 * c_iou + w2 * c_dist + w3 * c_motion + w4 * c_rel


def test_jcma_matches_independent_recomputation(cfg, track_factory):
    rng = np.random.default_rng(2024)
    for case in range(50):
        steps = int(rng.integers(1, 6))
        start = rng.uniform(200, 800, 2)
        velocity = rng.uniform(-8, 8, 2)
        centers = [tuple(start + velocity * k + rng.normal(0, 1.5, 2)) for k in range(steps)]
        track = track_factory(centers, size=tuple(rng.uniform(10, 40, 2)))
        # Predicted to the next frame, as the tracker sees it.
        track.motion = kf_predict(track.motion)
        frame = steps + 1
        n_dets = int(rng.integers(1, 4))
        dets = [
            _det(frame, *(np.asarray(centers[-1]) + velocity + rng.normal(0, 15, 2)), *rng.uniform(10, 40, 2))
            for _ in range(n_dets)
        ]
        costs = jcma_cost([track], dets, cfg, frame=frame).values
        for j in range(n_dets):
            expected = _independent_entry(track, dets, j, cfg)
            assert costs[0, j] == pytest.approx(expected, abs=1e-9), f"case {case}, detection {j}"


def test_jcma_entries_bounded(cfg, track_factory):
    rng = np.random.default_rng(8)
    for _ in range(30):
        tracks = [
            track_factory([tuple(rng.uniform(0, 1000, 2)) for _ in range(int(rng.integers(1, 5)))], track_id=k + 1)
            for k in range(int(rng.integers(1, 5)))
        ]
        frame = max(t.last_update_frame for t in tracks) + 1
        dets = [_det(frame, *rng.uniform(0, 1000, 2)) for _ in range(int(rng.integers(1, 6)))]
        values = jcma_cost(tracks, dets, cfg).values
        assert values.shape == (len(tracks), len(dets))
        assert np.all((values >= 0.0) & (values <= 1.0))


def test_jcma_translation_invariant(cfg, track_factory):
    shift = np.array([137.0, -58.0])
    base_paths = [
        [(300.0, 300.0), (305.0, 302.0), (310.0, 305.0)],
        [(500.0, 420.0), (497.0, 425.0)],
    ]
    det_centers = [(315.0, 307.0), (494.0, 431.0), (700.0, 350.0)]

    def matrix(offset):
        tracks = [
            track_factory([tuple(np.asarray(p) + offset) for p in path], track_id=k + 1)
            for k, path in enumerate(base_paths)
        ]
        dets = [_det(4, *(np.asarray(c) + offset)) for c in det_centers]
        return jcma_cost(tracks, dets, cfg, frame=4).values

    np.testing.assert_allclose(matrix(np.zeros(2)), matrix(shift), atol=1e-9)


def test_iou_cost_empty_shapes(track_factory):
    track = track_factory([(10.0, 10.0)])
    assert iou_cost([track], []).values.shape == (1, 0)
    assert iou_cost([], [_det(1, 0.0, 0.0)]).values.shape == (0, 1)


# Assignment

def test_solve_assignment_examples():
    single = solve_assignment(CostMatrix(np.array([[0.1]])), 0.8)
    assert single.pairs == ((0, 0),)

    diagonal = CostMatrix(np.array([[0.1, 0.9], [0.9, 0.1]]))
    result = solve_assignment(diagonal, 0.8)
    assert sorted(result.pairs) == [(0, 0), (1, 1)]
    assert result.total_cost(diagonal) == pytest.approx(0.2)

    gated = solve_assignment(CostMatrix(np.full((2, 2), 0.9)), 0.8)
    assert gated.pairs == ()
    assert gated.unmatched_tracks == (0, 1)
    assert gated.unmatched_detections == (0, 1)


def test_solve_assignment_empty():
    result = solve_assignment(CostMatrix.empty(0, 3), 0.8)
    assert result.pairs == ()
    assert result.unmatched_detections == (0, 1, 2)


def _brute_force_minimum(values: np.ndarray) -> float:
    n, m = values.shape
    if n > m:
        values, (n, m) = values.T, (m, n)
    perms = np.array(list(itertools.permutations(range(m), n)))
    return float(values[np.arange(n), perms].sum(axis=1).min())


def test_solve_assignment_matches_exhaustive_search():
    rng = np.random.default_rng(0)
    for case in range(1000):
        n, m = (int(v) for v in rng.integers(1, 8, size=2))
        values = rng.random((n, m))
        # A gate far above every entry makes the full matching optimal.
        result = solve_assignment(CostMatrix(values), gate=10.0)
        assert len(result.pairs) == min(n, m)
        # Costs are rounded to 1e-9 before solving, so each matched pair may be off by that much.
        tolerance = min(n, m) * 1e-9 + 1e-12
        assert result.total_cost(CostMatrix(values)) == pytest.approx(_brute_force_minimum(values), abs=tolerance), \
            f"case {case}: {n}x{m}"


def test_row_constant_keeps_argmin():
    rng = np.random.default_rng(4)
    values = rng.random((1, 5)) * 0.5
    shifted = values + 0.2
    a = solve_assignment(CostMatrix(values), 0.8).pairs
    b = solve_assignment(CostMatrix(shifted), 0.8).pairs
    assert a == b == ((0, int(np.argmin(values))),)


def test_pairs_within_gate_only():
    rng = np.random.default_rng(9)
    for _ in range(100):
        values = rng.random((4, 5))
        result = solve_assignment(CostMatrix(values), 0.5)
        for i, j in result.pairs:
            assert values[i, j] <= 0.5
        rows = [i for i, _ in result.pairs] + list(result.unmatched_tracks)
        cols = [j for _, j in result.pairs] + list(result.unmatched_detections)
        assert sorted(rows) == list(range(4))
        assert sorted(cols) == list(range(5))
