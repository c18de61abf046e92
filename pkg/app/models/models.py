"""
Data models for the SkyTrack tracking engine.
Defines all data structures used throughout the application.
"""

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Deque, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import GeometryError, InputValidationError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box stored as top-left corner plus size."""
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        values = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in values):
            raise GeometryError(f"Box coordinates must be finite, got {values}")
        if self.w <= 0 or self.h <= 0:
            raise GeometryError(f"Box size must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Tuple[float, float]:
        return center(self)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def translate(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(self.x + dx, self.y + dy, self.w, self.h)

    def union(self, other: "BoundingBox") -> "BoundingBox":
        """Smallest box covering both boxes."""
        x1 = min(self.x, other.x)
        y1 = min(self.y, other.y)
        return BoundingBox(x1, y1, max(self.x2, other.x2) - x1, max(self.y2, other.y2) - y1)

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x2 and self.y <= py <= self.y2

    def clamp_to(self, width: float, height: float) -> "BoundingBox":
        """Shift the box inside the frame, shrinking it only when it is larger than the frame."""
        w = min(self.w, float(width))
        h = min(self.h, float(height))
        x = min(max(self.x, 0.0), width - w)
        y = min(max(self.y, 0.0), height - h)
        return BoundingBox(x, y, w, h)

    def __str__(self):
        return f"({self.x:.1f}, {self.y:.1f}, {self.w:.1f}, {self.h:.1f})"


def center(box: BoundingBox) -> Tuple[float, float]:
    """Center point of a box."""
    return (box.x + box.w / 2.0, box.y + box.h / 2.0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, symmetric and exactly 1 for identical boxes."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = (a.x2 - a.x) * (a.y2 - a.y)
    area_b = (b.x2 - b.x) * (b.y2 - b.y)
    return min(1.0, inter / (area_a + area_b - inter))


def boxes_to_array(boxes: Sequence[BoundingBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) array of x, y, w, h."""
    if not boxes:
        return np.zeros((0, 4), dtype=float)
    return np.array([b.as_tuple() for b in boxes], dtype=float)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Pairwise IoU between two (N, 4) and (M, 4) x/y/w/h arrays.

    Uses the same corner arithmetic as iou() so both agree on every pair.
    """
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=float)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    ix = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    iy = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    overlap = (ix > 0) & (iy > 0)
    inter = np.where(overlap, ix * iy, 0.0)
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    return np.where(overlap, np.minimum(1.0, inter / union), 0.0)


class DetectionSource(Enum):
    """Which detector produced a detection."""
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class Detection:
    """A single detector output in one frame."""
    frame: int
    box: BoundingBox
    confidence: float
    source: DetectionSource = DetectionSource.GLOBAL
    roi_id: Optional[int] = None

    def __post_init__(self):
        if self.frame < 1:
            raise InputValidationError(f"Detection frame must be >= 1, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InputValidationError(f"Detection confidence must be in [0, 1], got {self.confidence}")
        if self.source is DetectionSource.LOCAL and self.roi_id is None:
            raise InputValidationError("Local detections must name their ROI")
        if self.source is DetectionSource.GLOBAL and self.roi_id is not None:
            raise InputValidationError("Global detections cannot carry an ROI id")

    @property
    def center(self) -> Tuple[float, float]:
        return center(self.box)


class TrackState(Enum):
    """Track lifecycle states."""
    TENTATIVE = "tentative"
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


class TrackerMode(Enum):
    """Association variant a tracker state was created for."""
    FULL = "full"
    BASELINE = "baseline"


@dataclass(frozen=True)
class HistoryEntry:
    """One observed state of a track."""
    frame: int
    box: BoundingBox
    center: Tuple[float, float]
    velocity: Tuple[float, float]  # px/frame, finite difference against the previous entry
    has_velocity: bool = True      # False for the entry that started the track


@dataclass(frozen=True, eq=False)
class MotionState:
    """Kalman mean [cx, cy, w, h, vcx, vcy, vw, vh] and its covariance."""
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def center(self) -> Tuple[float, float]:
        return (float(self.mean[0]), float(self.mean[1]))

    @property
    def velocity(self) -> Tuple[float, float]:
        return (float(self.mean[4]), float(self.mean[5]))

    @property
    def box(self) -> BoundingBox:
        w = max(float(self.mean[2]), 1.0)
        h = max(float(self.mean[3]), 1.0)
        return BoundingBox.from_center(float(self.mean[0]), float(self.mean[1]), w, h)


@dataclass(eq=False)
class Track:
    """Identity-bearing trajectory with motion state and bounded history."""
    id: int
    state: TrackState
    motion: MotionState
    history: Deque[HistoryEntry]
    last_update_frame: int
    start_frame: int
    direction_history: Deque[float] = field(default_factory=deque)
    confidence: float = 0.0
    hits: int = 1      # consecutive matched frames
    misses: int = 0    # consecutive unmatched frames
    last_roi: Optional[BoundingBox] = None
    _speed_cache: Optional[Tuple[Tuple[int, int], float]] = field(default=None, init=False, repr=False)

    @classmethod
    def spawn(cls, track_id: int, detection: Detection, motion: MotionState,
              h_max: int, state: TrackState = TrackState.TENTATIVE,
              roi: Optional[BoundingBox] = None) -> "Track":
        """Create a track from its first detection."""
        entry = HistoryEntry(
            frame=detection.frame,
            box=detection.box,
            center=detection.center,
            velocity=(0.0, 0.0),
            has_velocity=False,
        )
        return cls(
            id=track_id,
            state=state,
            motion=motion,
            history=deque([entry], maxlen=h_max),
            last_update_frame=detection.frame,
            start_frame=detection.frame,
            direction_history=deque(maxlen=h_max),
            confidence=detection.confidence,
            last_roi=roi,
        )

    def record(self, detection: Detection, roi: Optional[BoundingBox] = None) -> None:
        """Append an observation; the motion state is updated by the caller."""
        last = self.history[-1]
        if detection.frame <= last.frame:
            raise InputValidationError(
                f"Track {self.id} history must be strictly increasing: {detection.frame} after {last.frame}"
            )
        cx, cy = detection.center
        gap = detection.frame - last.frame
        velocity = ((cx - last.center[0]) / gap, (cy - last.center[1]) / gap)
        self.history.append(HistoryEntry(detection.frame, detection.box, (cx, cy), velocity))
        if velocity != (0.0, 0.0):
            self.direction_history.append(math.atan2(velocity[1], velocity[0]))
        self.last_update_frame = detection.frame
        self.confidence = detection.confidence
        self.hits += 1
        self.misses = 0
        self.last_roi = roi

    def mark_missed(self) -> None:
        self.misses += 1
        self.hits = 0

    @property
    def predicted_box(self) -> BoundingBox:
        return self.motion.box

    @property
    def last_center(self) -> Tuple[float, float]:
        return self.history[-1].center

    @property
    def last_velocity(self) -> Tuple[float, float]:
        return self.history[-1].velocity

    @property
    def last_direction(self) -> Optional[float]:
        return self.direction_history[-1] if self.direction_history else None

    @property
    def mean_speed(self) -> float:
        """Average observed speed over history entries that have a velocity."""
        key = (self.history[-1].frame, len(self.history)) if self.history else (0, 0)
        if self._speed_cache is None or self._speed_cache[0] != key:
            speeds = [math.hypot(*e.velocity) for e in self.history if e.has_velocity]
            self._speed_cache = (key, sum(speeds) / len(speeds) if speeds else 0.0)
        return self._speed_cache[1]

    @property
    def is_alive(self) -> bool:
        return self.state is not TrackState.REMOVED


@dataclass(frozen=True)
class CostMatrix:
    """Dense track-by-detection cost matrix with entries in [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError(f"Cost matrix must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Cost matrix entries must be finite")

    @property
    def rows(self) -> int:
        return int(self.values.shape[0])

    @property
    def cols(self) -> int:
        return int(self.values.shape[1])

    @classmethod
    def empty(cls, rows: int, cols: int) -> "CostMatrix":
        return cls(np.zeros((rows, cols), dtype=float))


@dataclass(frozen=True)
class Assignment:
    """Result of matching rows (tracks) to columns (detections)."""
    pairs: Tuple[Tuple[int, int], ...]
    unmatched_tracks: Tuple[int, ...]
    unmatched_detections: Tuple[int, ...]

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[int, int]], n_rows: int, n_cols: int) -> "Assignment":
        rows = {r for r, _ in pairs}
        cols = {c for _, c in pairs}
        return cls(
            pairs=tuple(sorted(pairs)),
            unmatched_tracks=tuple(i for i in range(n_rows) if i not in rows),
            unmatched_detections=tuple(j for j in range(n_cols) if j not in cols),
        )

    def total_cost(self, m: CostMatrix) -> float:
        return float(sum(m.values[r, c] for r, c in self.pairs))


@dataclass(frozen=True)
class TrackFeature:
    """Eight-dimensional history feature used for memory recovery."""
    x_abs: float
    y_abs: float
    x_rel: float
    y_rel: float
    v_x: float
    v_y: float
    theta: float
    w: float

    def __post_init__(self):
        if not 0.0 < self.w <= 1.0:
            raise ValueError(f"Decay weight must be in (0, 1], got {self.w}")
        if not -math.pi < self.theta <= math.pi:
            raise ValueError(f"Direction must be in (-pi, pi], got {self.theta}")
        if not (0.0 <= self.x_rel <= 1.0 and 0.0 <= self.y_rel <= 1.0):
            raise ValueError(f"Relative position must be in [0, 1], got ({self.x_rel}, {self.y_rel})")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x_abs, self.y_abs, self.x_rel, self.y_rel, self.v_x, self.v_y, self.theta, self.w],
            dtype=float,
        )


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Diagonal-covariance Gaussian mixture fitted by EM."""
    weights: np.ndarray      # (K,)
    means: np.ndarray        # (K, D)
    variances: np.ndarray    # (K, D) covariance diagonals
    log_likelihood_trace: Tuple[float, ...] = ()
    converged: bool = False

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def covariances(self) -> np.ndarray:
        """Full (K, D, D) diagonal covariance matrices."""
        return np.stack([np.diag(v) for v in self.variances])

    @property
    def n_iter(self) -> int:
        return max(0, len(self.log_likelihood_trace) - 1)


class Mode(Enum):
    """Detection mode of the scheduler."""
    GD = "global"
    LD = "local"


@dataclass(frozen=True)
class ROI:
    """A local detection window and the tracks it follows."""
    roi_id: int
    rect: BoundingBox
    member_tracks: Tuple[int, ...]
    misses: int = 0


@dataclass(frozen=True)
class SchedulerState:
    """Global/local scheduler state between frames."""
    mode: Mode
    frames_in_mode: int
    rois: Tuple[ROI, ...]
    frame_dims: Tuple[int, int]
    miss_streak: int = 0

    def with_rois(self, rois: Sequence[ROI]) -> "SchedulerState":
        streak = self.miss_streak
        return replace(self, rois=tuple(replace(r, misses=streak) for r in rois))


@dataclass
class TrackerState:
    """All tracks of one tracker instance plus its frame counter."""
    tracks: List[Track] = field(default_factory=list)
    next_id: int = 1
    frame: int = 0
    mode: TrackerMode = TrackerMode.FULL
    recovery_enabled: bool = True

    def tracks_in(self, *states: TrackState) -> List[Track]:
        return [t for t in self.tracks if t.state in states]


@dataclass(frozen=True)
class TrackOutput:
    """One reported box of an Active track."""
    track_id: int
    box: BoundingBox
    confidence: float


@dataclass
class FrameEvents:
    """Lifecycle event counts for one frame."""
    new: int = 0
    recovered: int = 0
    lost: int = 0
    removed: int = 0
    id_assignments: int = 0


@dataclass
class FrameResult:
    """Tracker output for one frame."""
    frame: int
    outputs: List[TrackOutput] = field(default_factory=list)
    events: FrameEvents = field(default_factory=FrameEvents)
    stage_matches: Dict[int, Tuple[int, ...]] = field(default_factory=dict)  # stage -> detection indices


class TrajectorySet:
    """Per-frame map of (id, box) pairs, with ids unique inside each frame."""

    def __init__(self):
        self._frames: Dict[int, Dict[int, BoundingBox]] = {}

    def add(self, frame: int, track_id: int, box: BoundingBox) -> None:
        objects = self._frames.setdefault(frame, {})
        if track_id in objects:
            raise InputValidationError(f"Duplicate id {track_id} in frame {frame}")
        objects[track_id] = box

    def ensure_frame(self, frame: int) -> None:
        self._frames.setdefault(frame, {})

    def frames(self) -> List[int]:
        return sorted(self._frames)

    def get(self, frame: int) -> List[Tuple[int, BoundingBox]]:
        """Objects in a frame, sorted by id."""
        return sorted(self._frames.get(frame, {}).items())

    def ids(self) -> List[int]:
        return sorted({i for objects in self._frames.values() for i in objects})

    def count(self) -> int:
        return sum(len(objects) for objects in self._frames.values())

    def relabel(self, mapping: Dict[int, int]) -> "TrajectorySet":
        result = TrajectorySet()
        for frame in self.frames():
            result.ensure_frame(frame)
            for track_id, box in self.get(frame):
                result.add(frame, mapping.get(track_id, track_id), box)
        return result

    def __iter__(self) -> Iterator[Tuple[int, int, BoundingBox]]:
        for frame in self.frames():
            for track_id, box in self.get(frame):
                yield frame, track_id, box

    def __len__(self) -> int:
        return self.count()

    def __eq__(self, other):
        if not isinstance(other, TrajectorySet):
            return False
        return list(self) == list(other)


@dataclass
class MetricsReport:
    """MOT evaluation results; ratios in [0, 1], MOTA may be negative."""
    idsw: int = 0
    idf1: float = 0.0
    idp: float = 0.0
    idr: float = 0.0
    mota: float = 0.0
    motp: float = 0.0
    hota: float = 0.0
    deta: float = 0.0
    assa: float = 0.0
    fp: int = 0
    fn: int = 0
    tp: int = 0
    num_gt: int = 0
    num_pred: int = 0
    idtp: int = 0
    hota_per_alpha: Tuple[float, ...] = ()
    deta_per_alpha: Tuple[float, ...] = ()
    assa_per_alpha: Tuple[float, ...] = ()

    def scaled(self) -> Dict[str, float]:
        """Headline metrics on the 0-100 scale."""
        return {
            "IDSW": float(self.idsw),
            "IDF1": self.idf1 * 100,
            "MOTA": self.mota * 100,
            "MOTP": self.motp * 100,
            "HOTA": self.hota * 100,
            "DetA": self.deta * 100,
            "AssA": self.assa * 100,
        }

    def get_summary(self) -> str:
        """Get a summary of the evaluation results."""
        summary = f"GT objects: {self.num_gt}, predictions: {self.num_pred}\n"
        summary += f"TP: {self.tp}, FP: {self.fp}, FN: {self.fn}, IDSW: {self.idsw}\n"
        summary += f"IDF1: {self.idf1 * 100:.2f} (IDP {self.idp * 100:.2f}, IDR {self.idr * 100:.2f})\n"
        summary += f"MOTA: {self.mota * 100:.2f}, MOTP: {self.motp * 100:.2f}\n"
        summary += f"HOTA: {self.hota * 100:.2f}, DetA: {self.deta * 100:.2f}, AssA: {self.assa * 100:.2f}\n"
        return summary


@dataclass(frozen=True)
class MotRecord:
    """One line of a MOT text file."""
    frame: int
    id: int
    x: float
    y: float
    w: float
    h: float
    conf: float

    @property
    def box(self) -> BoundingBox:
        return BoundingBox(self.x, self.y, self.w, self.h)

    @property
    def is_detection(self) -> bool:
        return self.id == -1

    def to_line(self) -> str:
        return (
            f"{self.frame},{self.id},{self.x:.6f},{self.y:.6f},"
            f"{self.w:.6f},{self.h:.6f},{self.conf:.6f},-1,-1,-1"
        )
