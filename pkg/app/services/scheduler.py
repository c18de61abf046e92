"""
Global/local detection scheduler.

Runs full-frame (global) detection until tracking is stable, then switches to
local detection on windows around the tracked targets, and falls back to global
detection after a fixed number of frames or when every window comes back empty.
Also owns the window geometry: placement, merging, splitting and the safe zone.
"""

import math
from dataclasses import replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from app.core.config import (
    FRAME_HEIGHT, FRAME_WIDTH, ROI_SIZE, SAFE_ZONE_FRACTION,
    SAFE_ZONE_MARGIN, TrackerConfig
)
from app.core.exceptions import GeometryError
from app.models import (
    ROI, BoundingBox, Detection, DetectionSource, Mode,
    SchedulerState, Track, TrackState, iou
)
from app.services.motion import kf_predict

Point = Tuple[float, float]


def initial_scheduler_state(frame_dims: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT)) -> SchedulerState:
    return SchedulerState(mode=Mode.GD, frames_in_mode=0, rois=(), frame_dims=tuple(frame_dims))


def is_tracking_stable(tracks: Sequence[Track], cfg: TrackerConfig) -> bool:
    """At least one Active track matched in the last `stable_hits` consecutive frames."""
    return any(t.state is TrackState.ACTIVE and t.hits >= cfg.stable_hits for t in tracks)


def advance(state: SchedulerState, tracks: Sequence[Track], detections_found_per_roi: Sequence[int],
            cfg: TrackerConfig) -> SchedulerState:
    """
    Decide the detection mode of the next frame.

    Called once per frame after tracking. frames_in_mode counts the frames
    already spent in the current mode, including this one.

    Args:
        state: Scheduler state of the frame just processed
        tracks: Tracker tracks after this frame
        detections_found_per_roi: Target detections per ROI this frame (LD only)
        cfg: Tracker configuration (n_g, n_l, n_m, stable_hits)

    Returns:
        Scheduler state for the next frame; ROIs are cleared and rebuilt by the caller
    """
    frames = state.frames_in_mode + 1

    if state.mode is Mode.GD:
        if frames >= cfg.n_g and is_tracking_stable(tracks, cfg):
            logger.debug(f"Switching to local detection after {frames} global frames")
            return replace(state, mode=Mode.LD, frames_in_mode=0, rois=(), miss_streak=0)
        return replace(state, frames_in_mode=frames)

    all_missed = not any(count > 0 for count in detections_found_per_roi)
    streak = state.miss_streak + 1 if all_missed else 0
    if streak >= cfg.n_m:
        logger.debug(f"Local context invalid after {streak} empty frames, resetting to global detection")
        return replace(state, mode=Mode.GD, frames_in_mode=0, rois=(), miss_streak=0)
    if frames >= cfg.n_l:
        logger.debug(f"Local detection window of {frames} frames expired")
        return replace(state, mode=Mode.GD, frames_in_mode=0, rois=(), miss_streak=0)
    return replace(state, frames_in_mode=frames, miss_streak=streak)


def _window(point: Point, size: float, frame_dims: Tuple[int, int]) -> BoundingBox:
    return BoundingBox.from_center(point[0], point[1], size, size).clamp_to(*frame_dims)


def predicted_center(track: Track) -> Point:
    """Kalman prediction of the track center for the next frame."""
    return kf_predict(track.motion).center


def make_rois(tracks: Sequence[Track], state: SchedulerState, cfg: TrackerConfig) -> List[ROI]:
    """
    Place one window per Active track, then merge, split and re-center them.

    Args:
        tracks: Tracker tracks after the current frame
        state: Scheduler state (frame dimensions)
        cfg: Tracker configuration (roi_size, tau_o, tau_d, tau_s)

    Returns:
        ROIs numbered from 1; empty when no track is Active
    """
    active = [t for t in tracks if t.state is TrackState.ACTIVE]
    if not active:
        return []

    centers = {t.id: predicted_center(t) for t in active}
    rois = [
        ROI(roi_id=k + 1, rect=_window(centers[t.id], cfg.roi_size, state.frame_dims), member_tracks=(t.id,))
        for k, t in enumerate(active)
    ]
    rois = merge_rois(rois, cfg.tau_o)

    result: List[ROI] = []
    for roi in rois:
        if len(roi.member_tracks) >= 2:
            parts = split_roi(roi, centers, cfg.tau_d, roi_size=cfg.roi_size,
                              tau_s=cfg.tau_s, frame_dims=state.frame_dims)
        else:
            parts = [enforce_safe_zone(roi, centers, cfg.tau_s, frame_dims=state.frame_dims)]
        result.extend(parts)
    return [replace(roi, roi_id=k + 1) for k, roi in enumerate(result)]


def merge_rois(rois: Sequence[ROI], tau_o: float) -> List[ROI]:
    """Merge windows overlapping by more than tau_o until no such pair is left."""
    current = list(rois)
    merged = True
    while merged:
        merged = False
        for i in range(len(current)):
            for j in range(i + 1, len(current)):
                if iou(current[i].rect, current[j].rect) > tau_o:
                    a, b = current[i], current[j]
                    current[i] = ROI(
                        roi_id=a.roi_id,
                        rect=a.rect.union(b.rect),
                        member_tracks=a.member_tracks + b.member_tracks,
                        misses=min(a.misses, b.misses),
                    )
                    del current[j]
                    merged = True
                    break
            if merged:
                break
    return current


def _single_linkage(points: Sequence[Point], threshold: float) -> List[List[int]]:
    """Connected components of the graph linking points closer than threshold."""
    parent = list(range(len(points)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if math.dist(points[i], points[j]) <= threshold:
                parent[find(j)] = find(i)

    clusters: Dict[int, List[int]] = {}
    for i in range(len(points)):
        clusters.setdefault(find(i), []).append(i)
    return list(clusters.values())


def split_roi(roi: ROI, track_centers: Mapping[int, Point], tau_d: float, *,
              roi_size: float = ROI_SIZE, tau_s: float = SAFE_ZONE_FRACTION,
              frame_dims: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT)) -> List[ROI]:
    """
    Split a window whose members are spread further apart than tau_d.

    Members are clustered by single linkage at tau_d; each cluster gets its own
    window centered on its centroid. A window that needs no split is expanded
    to keep all members inside its safe zone.
    """
    members = [i for i in roi.member_tracks if i in track_centers]
    points = [track_centers[i] for i in members]
    if len(points) < 2:
        return [enforce_safe_zone(roi, track_centers, tau_s, frame_dims=frame_dims)]

    spread = max(math.dist(p, q) for k, p in enumerate(points) for q in points[k + 1:])
    if spread <= tau_d:
        return [enforce_safe_zone(roi, track_centers, tau_s, frame_dims=frame_dims)]

    parts = []
    for cluster in _single_linkage(points, tau_d):
        centroid = tuple(np.mean([points[k] for k in cluster], axis=0))
        part = ROI(
            roi_id=roi.roi_id,
            rect=_window(centroid, roi_size, frame_dims),
            member_tracks=tuple(members[k] for k in cluster),
            misses=roi.misses,
        )
        parts.append(enforce_safe_zone(part, track_centers, tau_s, frame_dims=frame_dims))
    return parts


def safe_zone(rect: BoundingBox, tau_s: float) -> BoundingBox:
    """Centered sub-rectangle covering tau_s of the window area."""
    scale = math.sqrt(tau_s)
    cx, cy = rect.center
    return BoundingBox.from_center(cx, cy, rect.w * scale, rect.h * scale)


def enforce_safe_zone(roi: ROI, track_centers: Mapping[int, Point], tau_s: float, *,
                      frame_dims: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT)) -> ROI:
    """
    Re-center (and if needed enlarge) a window so its members sit in the safe zone.

    The result is clamped to the frame, so members closer to the frame border
    than the safe-zone margin can remain outside it.
    """
    points = [track_centers[i] for i in roi.member_tracks if i in track_centers]
    if not points:
        return roi
    zone = safe_zone(roi.rect, tau_s)
    if all(zone.contains_point(*p) for p in points):
        return roi

    scale = math.sqrt(tau_s)
    cx, cy = np.mean(points, axis=0)
    dx = max(abs(p[0] - cx) for p in points)
    dy = max(abs(p[1] - cy) for p in points)
    w = max(roi.rect.w, 2 * dx / scale + SAFE_ZONE_MARGIN)
    h = max(roi.rect.h, 2 * dy / scale + SAFE_ZONE_MARGIN)
    rect = BoundingBox.from_center(float(cx), float(cy), w, h).clamp_to(*frame_dims)
    return replace(roi, rect=rect)


def to_global(d: Detection, roi: ROI) -> Detection:
    """
    Map an ROI-local detection to frame coordinates.

    Raises:
        GeometryError: If the detection belongs to a different ROI
    """
    if d.source is not DetectionSource.LOCAL or d.roi_id != roi.roi_id:
        raise GeometryError(f"Detection from ROI {d.roi_id} cannot be mapped through ROI {roi.roi_id}")
    return replace(d, box=d.box.translate(roi.rect.x, roi.rect.y))


def to_local(d: Detection, roi: ROI) -> Detection:
    """Map a frame-coordinate detection into an ROI's local coordinates."""
    if d.source is DetectionSource.LOCAL and d.roi_id != roi.roi_id:
        raise GeometryError(f"Detection from ROI {d.roi_id} cannot be mapped through ROI {roi.roi_id}")
    return replace(
        d, box=d.box.translate(-roi.rect.x, -roi.rect.y),
        source=DetectionSource.LOCAL, roi_id=roi.roi_id,
    )


class DetectionScheduler:
    """
    Frame-by-frame driver of the global/local state machine.
    """

    def __init__(self, cfg: TrackerConfig, frame_dims: Optional[Tuple[int, int]] = None):
        self.cfg = cfg
        self.state = initial_scheduler_state(frame_dims or cfg.frame_dims)

    @property
    def mode(self) -> Mode:
        return self.state.mode

    @property
    def rois(self) -> Tuple[ROI, ...]:
        return self.state.rois

    def end_frame(self, tracks: Sequence[Track], detections_found_per_roi: Sequence[int]) -> SchedulerState:
        """Advance the mode and rebuild windows for the next frame."""
        self.state = advance(self.state, tracks, detections_found_per_roi, self.cfg)
        if self.state.mode is Mode.LD:
            self.state = self.state.with_rois(make_rois(tracks, self.state, self.cfg))
        return self.state
