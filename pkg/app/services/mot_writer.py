"""
MOT text file writer.
Serializes detections and trajectories as MOTChallenge-style lines.
"""

from pathlib import Path
from typing import Iterable, List, Mapping, Sequence, Union

from loguru import logger

from app.core.exceptions import DataIOError
from app.models import Detection, MotRecord, TrajectorySet


def detection_records(stream: Mapping[int, Sequence[Detection]]) -> List[MotRecord]:
    records = []
    for frame in sorted(stream):
        for det in stream[frame]:
            records.append(MotRecord(frame, -1, det.box.x, det.box.y, det.box.w, det.box.h, det.confidence))
    return records


def trajectory_records(trajectories: TrajectorySet, confidence: float = 1.0) -> List[MotRecord]:
    return [MotRecord(frame, track_id, box.x, box.y, box.w, box.h, confidence)
            for frame, track_id, box in trajectories]


class MotWriter:
    """Writes MOT records to a text file, creating parent directories."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def write_records(self, records: Iterable[MotRecord]) -> int:
        """
        Write records one per line.

        Returns:
            Number of records written

        Raises:
            DataIOError: If the file cannot be written
        """
        lines = [record.to_line() for record in records]
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        except OSError as e:
            raise DataIOError(f"Could not write MOT file {self.path}: {e}")
        logger.debug(f"Wrote {len(lines)} records to {self.path}")
        return len(lines)

    def write_detections(self, stream: Mapping[int, Sequence[Detection]]) -> int:
        return self.write_records(detection_records(stream))

    def write_trajectories(self, trajectories: TrajectorySet) -> int:
        return self.write_records(trajectory_records(trajectories))


def write_mot(path: Union[str, Path], data: Union[TrajectorySet, Mapping[int, Sequence[Detection]], Iterable[MotRecord]]) -> int:
    """Write a TrajectorySet, a detection stream or raw records to a MOT file."""
    writer = MotWriter(path)
    if isinstance(data, TrajectorySet):
        return writer.write_trajectories(data)
    if isinstance(data, Mapping):
        return writer.write_detections(data)
    return writer.write_records(data)
