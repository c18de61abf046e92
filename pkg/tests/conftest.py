"""
Shared fixtures and scenario builders.
"""

from typing import Callable, Dict, List, Sequence, Tuple

import pytest

from app.core.config import TrackerConfig
from app.models import BoundingBox, Detection, Track, TrackState, TrajectorySet
from app.services.motion import kf_init, kf_predict, kf_update

Point = Tuple[float, float]


@pytest.fixture
def cfg() -> TrackerConfig:
    return TrackerConfig()


def build_track(centers: Sequence[Point], *, start_frame: int = 1, size: Tuple[float, float] = (20.0, 20.0),
                track_id: int = 1, h_max: int = 30, state: TrackState = TrackState.ACTIVE) -> Track:
    """A track observed at consecutive frames along the given centers, Kalman-filtered like the tracker does."""
    w, h = size
    first = Detection(start_frame, BoundingBox.from_center(*centers[0], w, h), 0.9)
    track = Track.spawn(track_id, first, kf_init(first), h_max, state=state)
    for k, point in enumerate(centers[1:], start=1):
        det = Detection(start_frame + k, BoundingBox.from_center(*point, w, h), 0.9)
        track.motion = kf_update(kf_predict(track.motion), det.box)
        track.record(det)
    return track


def linear_centers(start: Point, velocity: Point, count: int) -> List[Point]:
    return [(start[0] + velocity[0] * k, start[1] + velocity[1] * k) for k in range(count)]


@pytest.fixture
def track_factory() -> Callable[..., Track]:
    return build_track


@pytest.fixture
def linear_target() -> Callable[..., Tuple[TrajectorySet, Dict[int, List[Detection]]]]:
    """
    Ground truth and detections of one constant-velocity target.

    Frames listed in `gaps` get no detection; the ground truth still holds the box.
    """

    def make(frames: int = 100, *, start: Point = (200.0, 300.0), velocity: Point = (4.0, 2.0),
             size: Tuple[float, float] = (16.0, 16.0), gaps: Sequence[int] = (),
             confidence: float = 0.9) -> Tuple[TrajectorySet, Dict[int, List[Detection]]]:
        gt = TrajectorySet()
        stream: Dict[int, List[Detection]] = {}
        skipped = set(gaps)
        for frame in range(1, frames + 1):
            cx = start[0] + velocity[0] * (frame - 1)
            cy = start[1] + velocity[1] * (frame - 1)
            box = BoundingBox.from_center(cx, cy, *size)
            gt.add(frame, 1, box)
            stream[frame] = [] if frame in skipped else [Detection(frame, box, confidence)]
        return gt, stream

    return make


def trajectories(rows: Sequence[Tuple[int, int, Tuple[float, float, float, float]]]) -> TrajectorySet:
    result = TrajectorySet()
    for frame, track_id, box in rows:
        result.add(frame, track_id, BoundingBox(*box))
    return result


@pytest.fixture
def trajectory_builder() -> Callable[..., TrajectorySet]:
    return trajectories
