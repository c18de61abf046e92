"""
MOT text file reader.
Parses MOTChallenge-style comma-separated files into detections or trajectories.
"""

import math
from pathlib import Path
from typing import Dict, List, Optional, Union

from loguru import logger

from app.core.exceptions import DataIOError, InputValidationError, MotFormatError
from app.models import Detection, MotRecord, TrajectorySet

DetectionStream = Dict[int, List[Detection]]


class MotReader:
    """Reads one MOT text file and converts its rows to data models."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._records_cache: Optional[List[MotRecord]] = None

    def _read_lines(self) -> List[str]:
        try:
            return self.path.read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            raise DataIOError(f"MOT file not found: {self.path}")
        except (OSError, UnicodeDecodeError) as e:
            raise DataIOError(f"Could not read MOT file {self.path}: {e}")

    def _parse_int(self, value: str, field: str, line_number: int) -> int:
        try:
            number = float(value)
        except ValueError:
            raise MotFormatError(self.path, line_number, f"{field} is not a number: {value!r}")
        if not number.is_integer():
            raise MotFormatError(self.path, line_number, f"{field} must be an integer, got {value!r}")
        return int(number)

    def _parse_float(self, value: str, field: str, line_number: int) -> float:
        try:
            number = float(value)
        except ValueError:
            raise MotFormatError(self.path, line_number, f"{field} is not a number: {value!r}")
        if not math.isfinite(number):
            raise MotFormatError(self.path, line_number, f"{field} is not finite: {value!r}")
        return number

    def _parse_line(self, line: str, line_number: int) -> MotRecord:
        fields = [f.strip() for f in line.split(",")]
        if len(fields) not in (9, 10):
            raise MotFormatError(self.path, line_number, f"expected 10 fields, got {len(fields)}")

        frame = self._parse_int(fields[0], "frame", line_number)
        if frame < 1:
            raise MotFormatError(self.path, line_number, f"frame must be >= 1, got {frame}")
        record = MotRecord(
            frame=frame,
            id=self._parse_int(fields[1], "id", line_number),
            x=self._parse_float(fields[2], "x", line_number),
            y=self._parse_float(fields[3], "y", line_number),
            w=self._parse_float(fields[4], "w", line_number),
            h=self._parse_float(fields[5], "h", line_number),
            conf=self._parse_float(fields[6], "conf", line_number),
        )
        if record.w <= 0 or record.h <= 0:
            raise MotFormatError(self.path, line_number, f"box size must be positive, got {record.w}x{record.h}")
        return record

    def load_records(self) -> List[MotRecord]:
        """
        Load all records, sorted by frame with file order kept inside a frame.

        Blank lines are skipped.

        Raises:
            DataIOError: If the file cannot be read
            MotFormatError: On the first malformed line
        """
        if self._records_cache is not None:
            return self._records_cache

        records = []
        for line_number, line in enumerate(self._read_lines(), start=1):
            if not line.strip():
                continue
            records.append(self._parse_line(line, line_number))
        records.sort(key=lambda r: r.frame)
        self._records_cache = records
        logger.debug(f"Read {len(records)} records from {self.path}")
        return records

    def load_detections(self) -> DetectionStream:
        """Detection rows (id = -1) grouped by frame."""
        stream: DetectionStream = {}
        for record in self.load_records():
            if not record.is_detection:
                raise InputValidationError(f"{self.path}: frame {record.frame} has a track id, expected detections")
            if not 0.0 <= record.conf <= 1.0:
                raise InputValidationError(f"{self.path}: confidence {record.conf} outside [0, 1] in frame {record.frame}")
            stream.setdefault(record.frame, []).append(Detection(record.frame, record.box, record.conf))
        return stream

    def load_trajectories(self) -> TrajectorySet:
        """Rows with track ids as a TrajectorySet."""
        trajectories = TrajectorySet()
        for record in self.load_records():
            if record.is_detection:
                raise InputValidationError(f"{self.path}: frame {record.frame} has a detection row, expected track ids")
            trajectories.add(record.frame, record.id, record.box)
        return trajectories


def parse_mot(path: Union[str, Path]) -> Union[TrajectorySet, DetectionStream]:
    """
    Parse a MOT file.

    Returns:
        A detection stream when every row has id -1 (including an empty
        file), otherwise a TrajectorySet
    """
    reader = MotReader(path)
    records = reader.load_records()
    if all(r.is_detection for r in records):
        return reader.load_detections()
    return reader.load_trajectories()
