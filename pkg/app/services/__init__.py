"""
Services for motion, association, recovery, scheduling, simulation and evaluation.
"""

from .evaluator import TrackingEvaluator
from .experiment import run_ablation, run_sequence
from .mot_reader import MotReader, parse_mot
from .mot_writer import MotWriter, write_mot
from .scheduler import DetectionScheduler
from .tracker import MultiStageTracker

__all__ = [
    "TrackingEvaluator",
    "run_ablation",
    "run_sequence",
    "MotReader",
    "parse_mot",
    "MotWriter",
    "write_mot",
    "DetectionScheduler",
    "MultiStageTracker"
]
