"""
Joint cost association between predicted tracks and detections.
Builds the composite cost matrix (overlap, center distance, motion consistency,
relational structure) and solves the rectangular assignment with OR-Tools.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from ortools.graph.python import linear_sum_assignment

from app.core.config import (
    ACCELERATION_COST_SCALE, DIRECTION_COST_SCALE, DISTANCE_SCALE_FACTOR,
    MOTION_WEIGHTS, RELATION_DEDUP_IOU, SPEED_COST_FLOOR, SPEED_COST_OFFSET,
    TrackerConfig
)
from app.core.exceptions import AssignmentError
from app.models import (
    Assignment, BoundingBox, CostMatrix, Detection, Track,
    boxes_to_array, iou, iou_matrix
)

_COST_SCALE = 1e9
_MAX_UNMATCHED_COST = 1e6


def cost_iou(t_pred: BoundingBox, d: BoundingBox) -> float:
    """Overlap cost, 1 - IoU."""
    return 1.0 - iou(t_pred, d)


def cost_dist(t_pred: BoundingBox, d: BoundingBox) -> float:
    """Center distance normalised by the mean side length of both boxes."""
    (xi, yi), (xj, yj) = t_pred.center, d.center
    scale = (t_pred.w + t_pred.h + d.w + d.h) / 4.0 * DISTANCE_SCALE_FACTOR
    return min(1.0, math.hypot(xi - xj, yi - yj) / scale)


def speed_cost(v_expected: float, v_avg: float) -> float:
    return min(1.0, abs(v_expected - v_avg) / max(SPEED_COST_FLOOR, SPEED_COST_OFFSET + v_avg))


def direction_cost(delta_theta: float) -> float:
    return min(1.0, abs(delta_theta) / DIRECTION_COST_SCALE)


def acceleration_cost(acceleration: float) -> float:
    return min(1.0, acceleration / ACCELERATION_COST_SCALE)


def _wrap_angle(angle):
    return np.arctan2(np.sin(angle), np.cos(angle))


def _motion_matrix(tracks: Sequence[Track], det_centers: np.ndarray, frame: int,
                   weights: Tuple[float, float, float]) -> Tuple[np.ndarray, np.ndarray]:
    """Motion consistency costs (n, m) and a per-track flag telling whether the term is defined."""
    n, m = len(tracks), det_centers.shape[0]
    defined = np.array([len(t.history) >= 2 for t in tracks], dtype=bool)
    if n == 0 or m == 0 or not defined.any():
        return np.zeros((n, m)), defined

    last_center = np.array([t.last_center for t in tracks], dtype=float)
    last_velocity = np.array([t.last_velocity for t in tracks], dtype=float)
    v_avg = np.array([t.mean_speed for t in tracks], dtype=float)
    has_direction = np.array([t.last_direction is not None for t in tracks], dtype=bool)
    last_direction = np.array([t.last_direction or 0.0 for t in tracks], dtype=float)
    gap = np.array([max(1, frame - t.last_update_frame) for t in tracks], dtype=float)

    displacement = (det_centers[None, :, :] - last_center[:, None, :]) / gap[:, None, None]
    v_expected = np.linalg.norm(displacement, axis=2)

    c_speed = np.minimum(
        1.0, np.abs(v_expected - v_avg[:, None]) / np.maximum(SPEED_COST_FLOOR, SPEED_COST_OFFSET + v_avg)[:, None]
    )
    expected_direction = np.arctan2(displacement[..., 1], displacement[..., 0])
    delta_theta = np.abs(_wrap_angle(expected_direction - last_direction[:, None]))
    delta_theta = np.where((v_expected > 0) & has_direction[:, None], delta_theta, 0.0)
    c_direction = np.minimum(1.0, delta_theta / DIRECTION_COST_SCALE)
    acceleration = np.linalg.norm(displacement - last_velocity[:, None, :], axis=2)
    c_acceleration = np.minimum(1.0, acceleration / ACCELERATION_COST_SCALE)

    b1, b2, b3 = weights
    costs = b1 * c_speed + b2 * c_direction + b3 * c_acceleration
    costs[~defined] = 0.0
    return np.clip(costs, 0.0, 1.0), defined


def cost_motion(t: Track, d: Detection, weights: Tuple[float, float, float] = MOTION_WEIGHTS) -> float:
    """
    Motion consistency of a detection with a track's observed history.

    Speed, direction and acceleration residuals are measured against the
    displacement from the last observed center. Tracks with fewer than two
    history entries have no motion evidence and cost 0.
    """
    costs, _ = _motion_matrix([t], np.array([d.center], dtype=float), d.frame, weights)
    return float(costs[0, 0])


def _relation_matrix(pred_centers: np.ndarray, det_centers: np.ndarray,
                     extra_points: np.ndarray, extra_owner: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Relational structure costs (n, m) and a mask of entries with at least one reference point.

    The reference set of entry (i, j) is every detection center except j plus
    the extra track points not owned by track i.
    """
    n, m = pred_centers.shape[0], det_centers.shape[0]
    if n == 0 or m == 0:
        return np.zeros((n, m)), np.zeros((n, m), dtype=bool)

    points = np.vstack([det_centers, extra_points]) if extra_points.size else det_centers
    n_points = points.shape[0]
    from_track = points[None, :, :] - pred_centers[:, None, :]   # (n, P, 2)
    from_det = points[None, :, :] - det_centers[:, None, :]      # (m, P, 2)

    dot = np.einsum("ipk,jpk->ijp", from_track, from_det)
    norms = np.linalg.norm(from_track, axis=2)[:, None, :] * np.linalg.norm(from_det, axis=2)[None, :, :]
    safe_norms = np.where(norms > 0, norms, 1.0)
    cosine = np.where(norms > 0, dot / safe_norms, 1.0)

    mask = np.ones((n, m, n_points), dtype=bool)
    mask[:, np.arange(m), np.arange(m)] = False
    for q, owner in enumerate(extra_owner):
        mask[owner, :, m + q] = False

    count = mask.sum(axis=2)
    mean_cosine = (cosine * mask).sum(axis=2) / np.maximum(count, 1)
    costs = np.where(count > 0, np.clip(1.0 - mean_cosine, 0.0, 1.0), 0.0)
    return costs, count > 0


def cost_rel(t: Track, d: Detection, others: Sequence[Tuple[float, float]]) -> float:
    """Structural dissimilarity between the track's and the detection's view of the other objects."""
    if not others:
        return 0.0
    ci = np.array(t.motion.center, dtype=float)
    cj = np.array(d.center, dtype=float)
    total = 0.0
    for ck in np.asarray(others, dtype=float):
        u, v = ck - ci, ck - cj
        norm = float(np.linalg.norm(u) * np.linalg.norm(v))
        total += float(u @ v) / norm if norm > 0 else 1.0
    return min(1.0, max(0.0, 1.0 - total / len(others)))


def effective_weights(cfg: TrackerConfig, motion_defined: bool = True,
                      relation_defined: bool = True) -> Tuple[float, float, float, float]:
    """Cost weights with the mass of undefined terms moved onto overlap and distance."""
    w1, w2, w3, w4 = cfg.cost_weights
    spare = (0.0 if motion_defined else w3) + (0.0 if relation_defined else w4)
    base = w1 + w2
    share1 = w1 / base if base > 0 else 0.5
    return (
        w1 + spare * share1,
        w2 + spare * (1.0 - share1),
        w3 if motion_defined else 0.0,
        w4 if relation_defined else 0.0,
    )


def blend_costs(c_iou: float, c_dist: float, c_motion: float, c_rel: float, cfg: TrackerConfig,
                motion_defined: bool = True, relation_defined: bool = True) -> float:
    """Weighted sum of the four component costs."""
    w1, w2, w3, w4 = effective_weights(cfg, motion_defined, relation_defined)
    return min(1.0, max(0.0, w1 * c_iou + w2 * c_dist + w3 * c_motion + w4 * c_rel))


def _predicted_boxes(tracks: Sequence[Track]) -> np.ndarray:
    """(N, 4) x/y/w/h array of the tracks' predicted boxes, same as Track.predicted_box."""
    means = np.array([t.motion.mean[:4] for t in tracks], dtype=float).reshape(-1, 4)
    sizes = np.maximum(means[:, 2:4], 1.0)
    return np.hstack([means[:, :2] - sizes / 2.0, sizes])


def _relation_extras(tracks: Sequence[Track], track_boxes: np.ndarray,
                     det_boxes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted centers of tracks that no detection already covers."""
    if len(tracks) == 0:
        return np.zeros((0, 2)), np.zeros(0, dtype=int)
    overlaps = iou_matrix(track_boxes, det_boxes)
    covered = (overlaps >= RELATION_DEDUP_IOU).any(axis=1) if det_boxes.shape[0] else np.zeros(len(tracks), bool)
    owners = np.flatnonzero(~covered)
    points = np.array([tracks[k].motion.center for k in owners], dtype=float).reshape(-1, 2)
    return points, owners


def jcma_cost(tracks: Sequence[Track], dets: Sequence[Detection], cfg: TrackerConfig,
              frame: Optional[int] = None) -> CostMatrix:
    """
    Build the composite cost matrix between predicted tracks and detections.

    Args:
        tracks: Tracks whose motion state has already been predicted to this frame
        dets: Detections of the current frame
        cfg: Tracker configuration (weights)
        frame: Current frame; defaults to the detections' frame

    Returns:
        CostMatrix with entries in [0, 1]
    """
    n, m = len(tracks), len(dets)
    if n == 0 or m == 0:
        return CostMatrix.empty(n, m)
    if frame is None:
        frame = dets[0].frame

    track_boxes = _predicted_boxes(tracks)
    det_boxes = boxes_to_array([d.box for d in dets])
    pred_centers = track_boxes[:, :2] + track_boxes[:, 2:] / 2.0
    det_centers = det_boxes[:, :2] + det_boxes[:, 2:] / 2.0

    c_iou = 1.0 - iou_matrix(track_boxes, det_boxes)

    scale = ((track_boxes[:, 2] + track_boxes[:, 3])[:, None] + (det_boxes[:, 2] + det_boxes[:, 3])[None, :]) \
        / 4.0 * DISTANCE_SCALE_FACTOR
    distance = np.linalg.norm(pred_centers[:, None, :] - det_centers[None, :, :], axis=2)
    c_dist = np.minimum(1.0, distance / scale)

    c_motion, motion_defined = _motion_matrix(tracks, det_centers, frame, cfg.motion_weights)

    extra_points, extra_owner = _relation_extras(tracks, track_boxes, det_boxes)
    c_rel, relation_defined = _relation_matrix(pred_centers, det_centers, extra_points, extra_owner)

    w1, w2, w3, w4 = cfg.cost_weights
    md = np.broadcast_to(motion_defined[:, None], (n, m))
    spare = np.where(md, 0.0, w3) + np.where(relation_defined, 0.0, w4)
    base = w1 + w2
    share1 = w1 / base if base > 0 else 0.5
    costs = (
        (w1 + spare * share1) * c_iou
        + (w2 + spare * (1.0 - share1)) * c_dist
        + np.where(md, w3, 0.0) * c_motion
        + np.where(relation_defined, w4, 0.0) * c_rel
    )
    return CostMatrix(np.clip(costs, 0.0, 1.0))


def iou_cost(tracks: Sequence[Track], dets: Sequence[Detection]) -> CostMatrix:
    """Overlap-only cost matrix used by the baseline tracker."""
    if not tracks or not dets:
        return CostMatrix.empty(len(tracks), len(dets))
    track_boxes = _predicted_boxes(tracks)
    det_boxes = boxes_to_array([d.box for d in dets])
    return CostMatrix(1.0 - iou_matrix(track_boxes, det_boxes))


def linear_assignment(costs: np.ndarray, allowed: np.ndarray, unmatched_cost: float) -> List[Tuple[int, int]]:
    """
    Minimum-cost partial matching on a rectangular matrix.

    Every row and column may stay unmatched at `unmatched_cost`; pairs are only
    drawn from entries where `allowed` is true. The problem is solved exactly as
    a square assignment padded with dummy rows and columns.

    Returns:
        Matched (row, col) pairs sorted by row
    """
    n, m = costs.shape
    rows, cols = np.nonzero(allowed)
    if n == 0 or m == 0 or rows.size == 0:
        return []

    unmatched = min(float(unmatched_cost), _MAX_UNMATCHED_COST)
    unmatched_int = int(round(unmatched * _COST_SCALE))

    # Rows 0..n-1 are tracks, n..n+m-1 are detection dummies.
    # Cols 0..m-1 are detections, m..m+n-1 are track dummies.
    real_costs = np.round(costs[rows, cols] * _COST_SCALE).astype(np.int64)
    dummy_rows, dummy_cols = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    tails = np.concatenate([
        rows,
        np.arange(n),
        n + np.arange(m),
        n + dummy_rows.ravel(),
    ])
    heads = np.concatenate([
        cols,
        m + np.arange(n),
        np.arange(m),
        m + dummy_cols.ravel(),
    ])
    arc_costs = np.concatenate([
        real_costs,
        np.full(n, unmatched_int, dtype=np.int64),
        np.full(m, unmatched_int, dtype=np.int64),
        np.zeros(n * m, dtype=np.int64),
    ])

    solver = linear_sum_assignment.SimpleLinearSumAssignment()
    solver.add_arcs_with_cost(tails.astype(np.int64), heads.astype(np.int64), arc_costs)
    status = solver.solve()
    if status != solver.OPTIMAL:
        raise AssignmentError(f"Assignment solver returned status {status} for a {n}x{m} problem")

    pairs = []
    for i in range(n):
        j = solver.right_mate(i)
        if j < m:
            pairs.append((i, int(j)))
    return pairs


def solve_assignment(m: CostMatrix, gate: float) -> Assignment:
    """
    Optimal track-detection matching over pairs whose cost is within the gate.

    Leaving a pair unmatched costs half the gate per side, so a pair is kept
    whenever its cost does not exceed the gate.

    Args:
        m: Cost matrix
        gate: Largest admissible pair cost

    Returns:
        Assignment partitioning rows and columns
    """
    if m.rows == 0 or m.cols == 0:
        return Assignment.from_pairs([], m.rows, m.cols)
    allowed = m.values <= gate
    pairs = linear_assignment(m.values, allowed, unmatched_cost=gate / 2.0)
    return Assignment.from_pairs(pairs, m.rows, m.cols)
