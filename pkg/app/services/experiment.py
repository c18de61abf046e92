"""
Experiment runner.

Drives the detection scheduler, the ROI oracle and the tracker over a
sequence, and runs seeded scenario suites across the tracker variants used
for ablation.
"""

import concurrent.futures
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from app.core.config import (
    ABLATE_WORKERS, NoiseModel, Occlusion, RunConfig, ScenarioConfig, TrackerConfig
)
from app.core.exceptions import ConfigError, InputValidationError
from app.models import (
    BoundingBox, Detection, MetricsReport, Mode, TrackerMode, TrajectorySet
)
from app.services.evaluator import TrackingEvaluator, combine_reports
from app.services.scheduler import DetectionScheduler, to_global
from app.services.simulator import gen_scenario, render_detections, roi_detector_oracle
from app.services.tracker import MultiStageTracker

SUITES = ("occlusion", "crossing", "mixed")


@dataclass(frozen=True)
class Variant:
    """One tracker configuration of the ablation study."""
    name: str
    joint_costs: bool
    recovery: bool
    local_detection: bool

    @property
    def tracker_mode(self) -> TrackerMode:
        return TrackerMode.FULL if self.joint_costs else TrackerMode.BASELINE


VARIANTS: Tuple[Variant, ...] = (
    Variant("ByteTrack", joint_costs=False, recovery=False, local_detection=False),
    Variant("ByteTrack+LD", joint_costs=False, recovery=False, local_detection=True),
    Variant("+JCMA", joint_costs=True, recovery=False, local_detection=False),
    Variant("+JCMA+PMR", joint_costs=True, recovery=True, local_detection=False),
    Variant("+JCMA+PMR+GD/LD", joint_costs=True, recovery=True, local_detection=True),
)
BASELINE = VARIANTS[0]
FULL = VARIANTS[-1]


def get_variant(name: str) -> Variant:
    for variant in VARIANTS:
        if variant.name == name:
            return variant
    raise ConfigError(f"Unknown variant '{name}'; choose from {', '.join(v.name for v in VARIANTS)}")


@dataclass
class SequenceRun:
    """Tracker output of one sequence and its timing."""
    results: TrajectorySet
    modes: List[Mode]
    elapsed: float
    steps: int

    @property
    def steps_per_second(self) -> float:
        return self.steps / self.elapsed if self.elapsed > 0 else float("inf")


def run_sequence(global_dets: Mapping[int, Sequence[Detection]], cfg: TrackerConfig, *,
                 variant: Variant = FULL, gt: Optional[TrajectorySet] = None,
                 noise: Optional[NoiseModel] = None, seed: int = 0,
                 frames: Optional[int] = None) -> SequenceRun:
    """
    Run one sequence frame by frame.

    Global-mode frames read the global detection stream; local-mode frames ask
    the ROI oracle for detections inside the scheduler's windows and map them
    back to frame coordinates.

    Args:
        global_dets: Global detections by frame
        cfg: Tracker configuration
        variant: Tracker variant (costs, recovery, local detection)
        gt: Ground truth, required for local detection
        noise: Noise model of the ROI oracle
        seed: Seed of the ROI oracle's random streams
        frames: Number of frames; defaults to the last frame of the inputs

    Returns:
        SequenceRun with the output trajectories and the per-frame modes

    Raises:
        InputValidationError: If local detection is enabled without ground truth
    """
    if variant.local_detection and gt is None:
        raise InputValidationError("Local detection needs ground truth for the ROI oracle")
    noise = noise or NoiseModel()
    if frames is None:
        last_frames = list(global_dets) + (gt.frames() if gt is not None else [])
        frames = max(last_frames, default=0)

    tracker = MultiStageTracker(cfg, variant.tracker_mode, recovery_enabled=variant.recovery)
    scheduler = DetectionScheduler(cfg)
    results = TrajectorySet()
    modes: List[Mode] = []
    elapsed = 0.0

    for frame in range(1, frames + 1):
        mode = scheduler.mode if variant.local_detection else Mode.GD
        rects: Optional[Dict[int, BoundingBox]] = None
        counts: List[int] = []
        if mode is Mode.LD:
            rois = {roi.roi_id: roi for roi in scheduler.rois}
            local = roi_detector_oracle(scheduler.rois, frame, gt, noise, seed, frame_dims=cfg.frame_dims)
            dets = [to_global(d, rois[d.roi_id]) for d in local]
            rects = {roi_id: roi.rect for roi_id, roi in rois.items()}
            counts = [sum(1 for d in local if d.roi_id == roi_id and d.confidence >= cfg.t_h) for roi_id in rois]
        else:
            dets = list(global_dets.get(frame, []))

        started = time.perf_counter()
        result = tracker.update(dets, frame=frame, rois=rects)
        elapsed += time.perf_counter() - started

        results.ensure_frame(frame)
        for output in result.outputs:
            results.add(frame, output.track_id, output.box)
        modes.append(mode)
        if variant.local_detection:
            scheduler.end_frame(tracker.tracks, counts)

    return SequenceRun(results=results, modes=modes, elapsed=elapsed, steps=frames)


@dataclass(frozen=True)
class SuiteCase:
    """One seeded scenario of a suite."""
    suite: str
    seed: int
    scenario: ScenarioConfig
    noise: NoiseModel


def scripted_occlusions(n_targets: int, frames: int, seed: int) -> Tuple[Occlusion, ...]:
    """Staggered occlusion windows of 10 to 25 frames for every target."""
    rng = np.random.default_rng([seed, 7])
    windows = []
    for target in range(1, n_targets + 1):
        start = 60 + 40 * (target - 1)
        while start < frames:
            duration = int(rng.integers(10, 26))
            windows.append(Occlusion(target=target, start=start, duration=duration))
            start += 150 + int(rng.integers(0, 40))
    return tuple(windows)


def build_suite(suite: str, seeds: int, *, frames: int, n_targets: int,
                base: Optional[RunConfig] = None) -> List[SuiteCase]:
    """
    Seeded scenarios of a named suite.

    Raises:
        ConfigError: If the suite name is unknown
    """
    if suite not in SUITES:
        raise ConfigError(f"Unknown suite '{suite}'; choose from {', '.join(SUITES)}")
    base = base or RunConfig()
    cases = []
    for seed in range(seeds):
        updates = {"seed": seed, "frames": frames, "n_targets": n_targets, "occlusions": ()}
        if suite == "occlusion":
            updates["occlusions"] = scripted_occlusions(n_targets, frames, seed)
        elif suite == "crossing":
            updates.update(crossing=True, motion_cv=1.0, motion_hover=0.0, motion_dive=0.0, motion_maneuver=0.0)
        config = base.with_updates(**updates)
        cases.append(SuiteCase(suite, seed, config.scenario, config.noise))
    return cases


@dataclass
class VariantOutcome:
    report: MetricsReport
    elapsed: float
    steps: int


def run_case(case: SuiteCase, cfg: TrackerConfig, variants: Sequence[Variant],
             include_hota: bool = True) -> Dict[str, VariantOutcome]:
    """Generate one scenario and evaluate every variant on it."""
    gt = gen_scenario(case.scenario)
    dets = render_detections(gt, case.noise, case.seed, frame_dims=case.scenario.frame_dims)
    evaluator = TrackingEvaluator(include_hota=include_hota)
    outcomes = {}
    for variant in variants:
        run = run_sequence(dets, cfg, variant=variant, gt=gt, noise=case.noise, seed=case.seed,
                           frames=case.scenario.frames)
        outcomes[variant.name] = VariantOutcome(evaluator.evaluate(gt, run.results), run.elapsed, run.steps)
    return outcomes


@dataclass
class AblationResult:
    """Suite-level results per variant, in variant order."""
    suite: str
    seeds: int
    reports: Dict[str, MetricsReport] = field(default_factory=dict)
    fps: Dict[str, float] = field(default_factory=dict)

    def format_table(self) -> str:
        header = f"{'Variant':<18}{'IDSW':>7}{'IDF1':>8}{'MOTA':>8}{'MOTP':>8}{'HOTA':>8}{'DetA':>8}{'AssA':>8}{'FPS':>10}"
        lines = [header, "-" * len(header)]
        for name, report in self.reports.items():
            s = report.scaled()
            lines.append(
                f"{name:<18}{report.idsw:>7d}{s['IDF1']:>8.2f}{s['MOTA']:>8.2f}{s['MOTP']:>8.2f}"
                f"{s['HOTA']:>8.2f}{s['DetA']:>8.2f}{s['AssA']:>8.2f}{self.fps[name]:>10.1f}"
            )
        return "\n".join(lines)


def run_ablation(suite: str, seeds: int, *, frames: int, n_targets: int,
                 variants: Sequence[Variant] = VARIANTS, workers: int = ABLATE_WORKERS,
                 include_hota: bool = True, config: Optional[RunConfig] = None) -> AblationResult:
    """
    Run every variant over a seeded suite and aggregate per variant.

    Cases run in `workers` processes when workers > 1; aggregation follows
    case order so the result does not depend on scheduling.
    """
    config = config or RunConfig()
    cases = build_suite(suite, seeds, frames=frames, n_targets=n_targets, base=config)
    logger.info("=" * 60)
    logger.info(f"Ablation on suite '{suite}': {len(cases)} scenarios, {len(variants)} variants")
    logger.info("=" * 60)

    if workers > 1 and len(cases) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(run_case, case, config.tracker, variants, include_hota) for case in cases]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = []
        for case in cases:
            outcomes.append(run_case(case, config.tracker, variants, include_hota))
            logger.debug(f"Finished {suite} scenario seed={case.seed}")

    result = AblationResult(suite=suite, seeds=seeds)
    for variant in variants:
        per_case = [o[variant.name] for o in outcomes]
        result.reports[variant.name] = combine_reports([o.report for o in per_case])
        elapsed = sum(o.elapsed for o in per_case)
        steps = sum(o.steps for o in per_case)
        result.fps[variant.name] = steps / elapsed if elapsed > 0 else float("inf")
        logger.info(f"  {variant.name}: IDSW {result.reports[variant.name].idsw}, "
                    f"IDF1 {result.reports[variant.name].idf1 * 100:.2f}")
    return result


@dataclass(frozen=True)
class ThroughputResult:
    steps: int
    elapsed: float

    @property
    def steps_per_second(self) -> float:
        return self.steps / self.elapsed if self.elapsed > 0 else float("inf")


def _throughput_scene(frame: int, n_tracks: int, n_dets: int, rng: np.random.Generator) -> List[Detection]:
    dets = []
    for k in range(n_tracks):
        # Every target skips one frame in seven so lost tracks keep the recovery stage busy.
        if frame > 5 and (frame + k) % 7 == 0:
            continue
        x = 100.0 + 160.0 * k + 3.0 * frame
        y = 200.0 + 50.0 * (k % 3) + 1.5 * frame
        dets.append(Detection(frame, BoundingBox(x % 1700.0, y % 900.0, 24.0, 18.0), 0.9))
    while len(dets) < n_dets:
        x, y = rng.uniform(0.0, 1800.0), rng.uniform(0.0, 1000.0)
        dets.append(Detection(frame, BoundingBox(float(x), float(y), 20.0, 20.0), float(rng.uniform(0.15, 0.95))))
    return dets


def measure_throughput(cfg: Optional[TrackerConfig] = None, steps: int = 1000, *, n_tracks: int = 10,
                       n_dets: int = 15, seed: int = 0, warmup: int = 10) -> ThroughputResult:
    """
    Time the full tracker step on a synthetic scene.

    Detections are prepared before timing, so only association, recovery and
    lifecycle work is measured.
    """
    cfg = cfg or TrackerConfig()
    rng = np.random.default_rng(seed)
    scenes = [_throughput_scene(frame, n_tracks, n_dets, rng) for frame in range(1, warmup + steps + 1)]
    tracker = MultiStageTracker(cfg, TrackerMode.FULL, recovery_enabled=True)
    for frame in range(1, warmup + 1):
        tracker.update(scenes[frame - 1], frame=frame)

    started = time.perf_counter()
    for frame in range(warmup + 1, warmup + steps + 1):
        tracker.update(scenes[frame - 1], frame=frame)
    elapsed = time.perf_counter() - started
    result = ThroughputResult(steps=steps, elapsed=elapsed)
    logger.info(f"Tracker throughput: {result.steps_per_second:.1f} steps/s over {steps} steps")
    return result
