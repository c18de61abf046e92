"""
Three-stage multi-object tracker.

Stage 1 matches high-confidence detections to Active and Tentative tracks,
stage 2 matches the leftover tracks to low-confidence detections, and stage 3
tries to recover Lost tracks from the leftover high-confidence detections
before the remainder start new tracks. The baseline variant uses overlap-only
costs and skips recovery.
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple

from loguru import logger

from app.core.config import TrackerConfig
from app.core.exceptions import ConfigError, FrameOrderError
from app.models import (
    BoundingBox, CostMatrix, Detection, FrameResult, Track,
    TrackerMode, TrackerState, TrackOutput, TrackState
)
from app.services.association import iou_cost, jcma_cost, solve_assignment
from app.services.memory_recovery import recover
from app.services.motion import kf_init, kf_multi_predict, kf_multi_update

CostFunction = Callable[[Sequence[Track], Sequence[Detection], TrackerConfig, int], CostMatrix]


def split_by_confidence(dets: Sequence[Detection], t_h: float, t_l: float) -> Tuple[List[Detection], List[Detection]]:
    """
    Partition detections into high and low confidence groups.

    Detections below t_l are dropped.

    Raises:
        ConfigError: If t_l is not below t_h
    """
    if t_l >= t_h:
        raise ConfigError(f"Low confidence threshold ({t_l}) must be below the high threshold ({t_h})")
    high = [d for d in dets if d.confidence >= t_h]
    low = [d for d in dets if t_l <= d.confidence < t_h]
    return high, low


def new_tracker_state(mode: TrackerMode = TrackerMode.FULL, recovery_enabled: bool = True) -> TrackerState:
    return TrackerState(mode=mode, recovery_enabled=recovery_enabled and mode is TrackerMode.FULL)


def _joint_costs(tracks, dets, cfg, frame):
    return jcma_cost(tracks, dets, cfg, frame=frame)


def _overlap_costs(tracks, dets, cfg, frame):
    return iou_cost(tracks, dets)


def _resolve_frame(state: TrackerState, dets: Sequence[Detection], frame: Optional[int]) -> int:
    if frame is None:
        frame = dets[0].frame if dets else state.frame + 1
    if frame <= state.frame:
        raise FrameOrderError(f"Frame {frame} does not follow frame {state.frame}")
    stray = [d.frame for d in dets if d.frame != frame]
    if stray:
        raise FrameOrderError(f"Detections for frame {frame} include frame(s) {sorted(set(stray))}")
    return frame


def _roi_rect(det: Detection, rois: Optional[Dict[int, BoundingBox]]) -> Optional[BoundingBox]:
    if rois and det.roi_id is not None:
        return rois.get(det.roi_id)
    return None


def _apply_matches(tracks: Sequence[Track], dets: Sequence[Detection],
                   rois: Optional[Dict[int, BoundingBox]]) -> None:
    updated = kf_multi_update([t.motion for t in tracks], [d.box for d in dets])
    for track, det, motion in zip(tracks, dets, updated):
        track.motion = motion
        track.record(det, roi=_roi_rect(det, rois))


def _run_frame(state: TrackerState, dets: Sequence[Detection], cfg: TrackerConfig,
               frame: Optional[int], rois: Optional[Dict[int, BoundingBox]],
               cost_fn: CostFunction, use_recovery: bool) -> Tuple[TrackerState, FrameResult]:
    frame = _resolve_frame(state, dets, frame)
    first_frame = state.frame == 0
    state.frame = frame
    result = FrameResult(frame=frame)
    events = result.events

    live = [t for t in state.tracks if t.state is not TrackState.REMOVED]
    for track, motion in zip(live, kf_multi_predict([t.motion for t in live])):
        track.motion = motion

    high, low = split_by_confidence(dets, cfg.t_h, cfg.t_l)
    high_index = [i for i, d in enumerate(dets) if d.confidence >= cfg.t_h]
    low_index = [i for i, d in enumerate(dets) if cfg.t_l <= d.confidence < cfg.t_h]

    # Stage 1: confirmed and tentative tracks against high-confidence detections
    pool = [t for t in live if t.state in (TrackState.ACTIVE, TrackState.TENTATIVE)]
    first = solve_assignment(cost_fn(pool, high, cfg, frame), cfg.gate_max_cost)
    _apply_matches([pool[ti] for ti, _ in first.pairs], [high[di] for _, di in first.pairs], rois)
    result.stage_matches[1] = tuple(high_index[di] for _, di in first.pairs)
    remaining_tracks = [pool[i] for i in first.unmatched_tracks]
    remaining_high = [high[j] for j in first.unmatched_detections]
    remaining_high_index = [high_index[j] for j in first.unmatched_detections]

    # Stage 2: leftover tracks against low-confidence detections
    second = solve_assignment(cost_fn(remaining_tracks, low, cfg, frame), cfg.gate_max_cost)
    _apply_matches([remaining_tracks[ti] for ti, _ in second.pairs], [low[di] for _, di in second.pairs], rois)
    result.stage_matches[2] = tuple(low_index[di] for _, di in second.pairs)
    unmatched_tracks = [remaining_tracks[i] for i in second.unmatched_tracks]

    matched = [pool[ti] for ti, _ in first.pairs] + [remaining_tracks[ti] for ti, _ in second.pairs]
    for track in matched:
        if track.state is TrackState.TENTATIVE and track.hits >= cfg.min_hits:
            track.state = TrackState.ACTIVE
            events.id_assignments += 1
            logger.debug(f"Frame {frame}: track {track.id} confirmed")

    # Stage 3: memory recovery of lost tracks, then births
    lost = [t for t in live if t.state is TrackState.LOST]
    recovered = set()
    stage3 = []
    if use_recovery and lost and remaining_high:
        third = recover(lost, remaining_high, cfg, frame, rois=rois)
        _apply_matches([lost[li] for li, _ in third.pairs], [remaining_high[di] for _, di in third.pairs], rois)
        for li, di in third.pairs:
            track = lost[li]
            track.state = TrackState.ACTIVE
            track.hits = 1
            recovered.add(track.id)
            events.recovered += 1
        stage3 = [remaining_high_index[di] for _, di in third.pairs]
        leftover = set(third.unmatched_detections)
        remaining_high = [d for j, d in enumerate(remaining_high) if j in leftover]
    result.stage_matches[3] = tuple(stage3)

    birth_state = TrackState.ACTIVE if first_frame and cfg.activate_first_frame else TrackState.TENTATIVE
    for det in remaining_high:
        track = Track.spawn(state.next_id, det, kf_init(det), cfg.h_max, state=birth_state,
                            roi=_roi_rect(det, rois))
        state.tracks.append(track)
        state.next_id += 1
        events.new += 1
        if birth_state is TrackState.ACTIVE:
            events.id_assignments += 1
        logger.debug(f"Frame {frame}: new track {track.id} at {det.box}")

    for track in unmatched_tracks:
        if track.state is TrackState.TENTATIVE:
            track.state = TrackState.REMOVED
            events.removed += 1
            continue
        track.mark_missed()
        if track.misses >= cfg.max_misses:
            track.state = TrackState.LOST
            events.lost += 1
            logger.debug(f"Frame {frame}: track {track.id} lost")

    for track in lost:
        if track.id in recovered:
            continue
        track.mark_missed()
        if frame - track.last_update_frame > cfg.max_lost_age:
            track.state = TrackState.REMOVED
            events.removed += 1
            logger.debug(f"Frame {frame}: track {track.id} removed after {cfg.max_lost_age} lost frames")

    state.tracks = [t for t in state.tracks if t.state is not TrackState.REMOVED]
    result.outputs = [
        TrackOutput(t.id, t.motion.box, t.confidence)
        for t in state.tracks
        if t.state is TrackState.ACTIVE and t.last_update_frame == frame
    ]
    return state, result


def step(state: TrackerState, dets: Sequence[Detection], cfg: TrackerConfig,
         frame: Optional[int] = None, rois: Optional[Dict[int, BoundingBox]] = None) -> Tuple[TrackerState, FrameResult]:
    """
    Advance the tracker by one frame with joint costs and memory recovery.

    Args:
        state: Tracker state, updated in place
        dets: Detections of this frame in global coordinates
        cfg: Tracker configuration
        frame: Frame index; inferred from the detections when omitted
        rois: ROI rectangles by id when detections came from local detection

    Returns:
        (state, FrameResult)

    Raises:
        FrameOrderError: If the frame does not advance
    """
    return _run_frame(state, dets, cfg, frame, rois, _joint_costs, state.recovery_enabled)


def baseline_step(state: TrackerState, dets: Sequence[Detection], cfg: TrackerConfig,
                  frame: Optional[int] = None, rois: Optional[Dict[int, BoundingBox]] = None) -> Tuple[TrackerState, FrameResult]:
    """Advance one frame with overlap-only costs and no recovery."""
    return _run_frame(state, dets, cfg, frame, rois, _overlap_costs, False)


class MultiStageTracker:
    """
    Stateful wrapper around step/baseline_step for frame-by-frame use.
    """

    def __init__(self, cfg: TrackerConfig, mode: TrackerMode = TrackerMode.FULL, recovery_enabled: bool = True):
        self.cfg = cfg
        self.state = new_tracker_state(mode, recovery_enabled)

    @property
    def mode(self) -> TrackerMode:
        return self.state.mode

    def update(self, dets: Sequence[Detection], frame: Optional[int] = None,
               rois: Optional[Dict[int, BoundingBox]] = None) -> FrameResult:
        step_fn = step if self.state.mode is TrackerMode.FULL else baseline_step
        self.state, result = step_fn(self.state, dets, self.cfg, frame=frame, rois=rois)
        return result

    @property
    def tracks(self) -> List[Track]:
        return self.state.tracks
