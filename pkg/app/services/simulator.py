"""
Seeded synthetic UAV scenarios and detector oracles.
Generates ground-truth trajectories for small aerial targets and renders noisy
global and ROI-local detections from them in place of a trained detector.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np
from loguru import logger

from app.core.config import (
    CLUTTER_CONF_RANGE, CONF_FLOOR, DIVE_ACCELERATION, DIVE_INITIAL_SPEED,
    FRAME_HEIGHT, FRAME_WIDTH, HOVER_JITTER_STD, HOVER_REVERSION,
    HOVER_STEP_CAP, SIM_BORDER_MARGIN, SIM_SIZE_RANGE,
    NoiseModel, ScenarioConfig
)
from app.models import ROI, BoundingBox, Detection, DetectionSource, TrajectorySet

_GLOBAL_STREAM = 0
_LOCAL_STREAM = 1


class MotionPattern(Enum):
    """Motion behaviour of a simulated target."""
    CV = "cv"
    HOVER = "hover"
    DIVE = "dive"
    MANEUVER = "maneuver"


@dataclass
class _Target:
    target_id: int
    pattern: MotionPattern
    w: float
    h: float
    cx: float
    cy: float
    vx: float
    vy: float
    anchor: Tuple[float, float]
    dive_limit: float

    def box(self) -> BoundingBox:
        return BoundingBox.from_center(self.cx, self.cy, self.w, self.h)

    def _bounds(self, frame_dims: Tuple[int, int]) -> Tuple[float, float, float, float]:
        width, height = frame_dims
        return self.w / 2.0, width - self.w / 2.0, self.h / 2.0, height - self.h / 2.0

    def _reflect(self, frame_dims: Tuple[int, int]) -> None:
        left, right, top, bottom = self._bounds(frame_dims)
        if self.cx < left:
            self.cx, self.vx = 2 * left - self.cx, abs(self.vx)
        elif self.cx > right:
            self.cx, self.vx = 2 * right - self.cx, -abs(self.vx)
        if self.cy < top:
            self.cy, self.vy = 2 * top - self.cy, abs(self.vy)
        elif self.cy > bottom:
            self.cy, self.vy = 2 * bottom - self.cy, -abs(self.vy)
        self.cx = min(max(self.cx, left), right)
        self.cy = min(max(self.cy, top), bottom)

    def advance(self, rng: np.random.Generator, cfg: ScenarioConfig) -> None:
        # Draw the same amount of randomness every frame regardless of pattern.
        jitter = rng.normal(0.0, HOVER_JITTER_STD, size=2)
        turn_roll = rng.random()
        turn_angle = rng.uniform(-math.pi / 2, math.pi / 2)

        if self.pattern is MotionPattern.HOVER:
            step = HOVER_REVERSION * (np.asarray(self.anchor) - (self.cx, self.cy)) + jitter
            norm = float(np.hypot(*step))
            if norm > HOVER_STEP_CAP:
                step *= HOVER_STEP_CAP / norm
            left, right, top, bottom = self._bounds(cfg.frame_dims)
            self.cx = min(max(self.cx + float(step[0]), left), right)
            self.cy = min(max(self.cy + float(step[1]), top), bottom)
            return

        if self.pattern is MotionPattern.DIVE:
            # Downward acceleration; a bounce off the bottom edge restarts the ramp.
            self.vy = min(self.vy + DIVE_ACCELERATION, self.dive_limit)
        elif self.pattern is MotionPattern.MANEUVER and turn_roll < cfg.maneuver_rate:
            cos_a, sin_a = math.cos(turn_angle), math.sin(turn_angle)
            self.vx, self.vy = cos_a * self.vx - sin_a * self.vy, sin_a * self.vx + cos_a * self.vy

        self.cx += self.vx
        self.cy += self.vy
        self._reflect(cfg.frame_dims)


def _spawn_targets(cfg: ScenarioConfig, rng: np.random.Generator) -> List[_Target]:
    width, height = cfg.frame_dims
    patterns = [MotionPattern(name) for name in cfg.motion_mix]
    probabilities = np.array(list(cfg.motion_mix.values()), dtype=float)
    probabilities /= probabilities.sum()
    phase = rng.uniform(0.0, 2 * math.pi)
    radius = 0.4 * min(width, height)

    targets = []
    for k in range(cfg.n_targets):
        w = float(rng.uniform(cfg.size_min, cfg.size_max))
        h = float(rng.uniform(cfg.size_min, cfg.size_max))
        speed = float(rng.uniform(cfg.speed_min, cfg.speed_max))
        heading = float(rng.uniform(-math.pi, math.pi))
        pattern = patterns[int(rng.choice(len(patterns), p=probabilities))]
        cx = float(rng.uniform(w / 2 + SIM_BORDER_MARGIN, width - w / 2 - SIM_BORDER_MARGIN))
        cy = float(rng.uniform(h / 2 + SIM_BORDER_MARGIN, height - h / 2 - SIM_BORDER_MARGIN))
        aim = rng.uniform(-20.0, 20.0, size=2)

        if cfg.crossing:
            # Launch on a circle around the frame center, aimed through it.
            angle = phase + 2 * math.pi * k / cfg.n_targets
            cx = width / 2 + radius * math.cos(angle)
            cy = height / 2 + radius * math.sin(angle)
            heading = math.atan2(height / 2 + aim[1] - cy, width / 2 + aim[0] - cx)
            speed = float(np.clip(radius / max(1.0, cfg.frames / 3), cfg.speed_min, cfg.speed_max))
            pattern = MotionPattern.CV

        vx, vy = speed * math.cos(heading), speed * math.sin(heading)
        if pattern is MotionPattern.DIVE:
            vx, vy = vx * 0.25, DIVE_INITIAL_SPEED
        targets.append(_Target(
            target_id=k + 1,
            pattern=pattern,
            w=w, h=h, cx=cx, cy=cy, vx=vx, vy=vy,
            anchor=(cx, cy),
            dive_limit=max(cfg.speed_max, DIVE_INITIAL_SPEED),
        ))
    return targets


def gen_scenario(cfg: ScenarioConfig) -> TrajectorySet:
    """
    Generate ground-truth trajectories for a scenario.

    Args:
        cfg: Scenario configuration; the output is a pure function of it

    Returns:
        TrajectorySet with ids 1..n_targets for frames 1..frames
    """
    rng = np.random.default_rng(cfg.seed)
    targets = _spawn_targets(cfg, rng)
    gt = TrajectorySet()
    for frame in range(1, cfg.frames + 1):
        gt.ensure_frame(frame)
        for target in targets:
            gt.add(frame, target.target_id, target.box())
        for target in targets:
            target.advance(rng, cfg)
    logger.debug(
        f"Generated scenario seed={cfg.seed}: {cfg.n_targets} targets, {cfg.frames} frames, "
        f"patterns {[t.pattern.value for t in targets]}"
    )
    return gt


def _frame_rng(seed: int, frame: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, frame, stream])


def _jitter(box: BoundingBox, noise: np.ndarray, nm: NoiseModel) -> Tuple[BoundingBox, float]:
    dx, dy = nm.loc_noise_std * noise[0], nm.loc_noise_std * noise[1]
    dw, dh = nm.size_noise_std * noise[2], nm.size_noise_std * noise[3]
    jittered = BoundingBox(box.x + dx, box.y + dy, max(1.0, box.w + dw), max(1.0, box.h + dh))
    magnitude = math.sqrt(dx * dx + dy * dy + dw * dw + dh * dh)
    confidence = nm.conf_base - nm.conf_penalty * magnitude / ((box.w + box.h) / 2.0)
    return jittered, min(1.0, max(CONF_FLOOR, confidence))


def _clutter(rng: np.random.Generator, count: int, area: BoundingBox) -> List[Tuple[BoundingBox, float]]:
    boxes = []
    for _ in range(count):
        w = float(rng.uniform(*SIM_SIZE_RANGE))
        h = float(rng.uniform(*SIM_SIZE_RANGE))
        w, h = min(w, area.w), min(h, area.h)
        x = float(rng.uniform(area.x, area.x2 - w))
        y = float(rng.uniform(area.y, area.y2 - h))
        boxes.append((BoundingBox(x, y, w, h), float(rng.uniform(*CLUTTER_CONF_RANGE))))
    return boxes


def render_detections(gt: TrajectorySet, nm: NoiseModel, seed: int, *,
                      frame_dims: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT)) -> Dict[int, List[Detection]]:
    """
    Render the global detector's output for every ground-truth frame.

    Each box is dropped with probability p_miss (always inside its occlusion
    windows), survivors are jittered, and Poisson clutter is added.

    Returns:
        Detections per frame, one (possibly empty) list for every GT frame
    """
    frame_area = BoundingBox(0.0, 0.0, float(frame_dims[0]), float(frame_dims[1]))
    stream: Dict[int, List[Detection]] = {}
    for frame in gt.frames():
        rng = _frame_rng(seed, frame, _GLOBAL_STREAM)
        detections = []
        for target_id, box in gt.get(frame):
            roll = rng.random()
            noise = rng.standard_normal(4)
            if nm.is_occluded(target_id, frame) or roll < nm.p_miss:
                continue
            jittered, confidence = _jitter(box, noise, nm)
            detections.append(Detection(frame, jittered, confidence))
        for box, confidence in _clutter(rng, int(rng.poisson(nm.fp_rate)), frame_area):
            detections.append(Detection(frame, box, confidence))
        stream[frame] = detections
    return stream


def roi_detector_oracle(rois: Sequence[ROI], frame: int, gt: TrajectorySet, nm: NoiseModel, seed: int, *,
                        frame_dims: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT)) -> List[Detection]:
    """
    Render local detections for the given windows.

    Each target is owned by the first window containing its center and is
    missed with the lower local miss rate. Boxes are in window coordinates.

    Returns:
        ROI-local detections tagged with their window id
    """
    rng = _frame_rng(seed, frame, _LOCAL_STREAM)
    frame_area = float(frame_dims[0]) * float(frame_dims[1])
    owned = set()
    detections = []
    objects = gt.get(frame)
    for roi in rois:
        for target_id, box in objects:
            roll = rng.random()
            noise = rng.standard_normal(4)
            if target_id in owned or not roi.rect.contains_point(*box.center):
                continue
            owned.add(target_id)
            if nm.is_occluded(target_id, frame) or roll < nm.p_miss_local:
                continue
            jittered, confidence = _jitter(box, noise, nm)
            detections.append(Detection(
                frame, jittered.translate(-roi.rect.x, -roi.rect.y), confidence,
                source=DetectionSource.LOCAL, roi_id=roi.roi_id,
            ))
        local_area = BoundingBox(0.0, 0.0, roi.rect.w, roi.rect.h)
        expected = nm.fp_rate * roi.rect.area / frame_area
        for box, confidence in _clutter(rng, int(rng.poisson(expected)), local_area):
            detections.append(Detection(
                frame, box, confidence, source=DetectionSource.LOCAL, roi_id=roi.roi_id,
            ))
    return detections
