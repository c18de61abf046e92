"""
Data models for the tracking engine.
"""

from .models import (
    BoundingBox,
    center,
    iou,
    iou_matrix,
    boxes_to_array,
    DetectionSource,
    Detection,
    TrackState,
    TrackerMode,
    HistoryEntry,
    MotionState,
    Track,
    CostMatrix,
    Assignment,
    TrackFeature,
    GaussianMixture,
    Mode,
    ROI,
    SchedulerState,
    TrackerState,
    TrackOutput,
    FrameEvents,
    FrameResult,
    TrajectorySet,
    MetricsReport,
    MotRecord
)

__all__ = [
    "BoundingBox",
    "center",
    "iou",
    "iou_matrix",
    "boxes_to_array",
    "DetectionSource",
    "Detection",
    "TrackState",
    "TrackerMode",
    "HistoryEntry",
    "MotionState",
    "Track",
    "CostMatrix",
    "Assignment",
    "TrackFeature",
    "GaussianMixture",
    "Mode",
    "ROI",
    "SchedulerState",
    "TrackerState",
    "TrackOutput",
    "FrameEvents",
    "FrameResult",
    "TrajectorySet",
    "MetricsReport",
    "MotRecord"
]
