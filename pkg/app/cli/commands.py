"""
Command-line surface: simulate, track, eval, ablate and stff-check.
"""

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from loguru import logger

from app import __version__
from app.core.config import ABLATE_WORKERS, LOG_LEVEL, SIM_FRAMES, SIM_TARGETS, RunConfig
from app.core.exceptions import DataIOError, FlagConflictError, InputValidationError, TrackingError
from app.core.log import configure_logging
from app.models import MetricsReport, Mode
from app.services.evaluator import TrackingEvaluator
from app.services.experiment import (
    BASELINE, SUITES, VARIANTS, Variant, get_variant, run_ablation, run_sequence
)
from app.services.mot_reader import MotReader
from app.services.mot_writer import MotWriter
from app.services.simulator import gen_scenario, render_detections
from app.services.stff import StffParams, dump_params, run_invariant_checks

GT_FILE = "gt.txt"
DET_FILE = "det_global.txt"
MANIFEST_FILE = "scenario.cfg"

_REPORT_KEYS = ("IDSW", "IDF1", "MOTA", "MOTP", "HOTA", "DetA", "AssA")


def format_report(report: MetricsReport) -> str:
    """Aligned table followed by key=value lines, metrics on the 0-100 scale."""
    scaled = report.scaled()
    lines = [f"{'Metric':<8}{'Value':>10}", "-" * 18]
    for key in _REPORT_KEYS:
        value = f"{report.idsw:d}" if key == "IDSW" else f"{scaled[key]:.2f}"
        lines.append(f"{key:<8}{value:>10}")
    lines.append("")
    for key in _REPORT_KEYS:
        value = f"{report.idsw:d}" if key == "IDSW" else f"{scaled[key]:.4f}"
        lines.append(f"{key.lower()}={value}")
    for key in ("tp", "fp", "fn", "num_gt", "num_pred"):
        lines.append(f"{key}={getattr(report, key)}")
    return "\n".join(lines)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = RunConfig.load(args.config)
    if args.seed is not None:
        config = config.with_updates(seed=args.seed)
    out = Path(args.out)

    gt = gen_scenario(config.scenario)
    dets = render_detections(gt, config.noise, config.scenario.seed, frame_dims=config.scenario.frame_dims)
    MotWriter(out / GT_FILE).write_trajectories(gt)
    n_dets = MotWriter(out / DET_FILE).write_detections(dets)
    try:
        (out / MANIFEST_FILE).write_text(config.to_text(), encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"Could not write scenario manifest to {out}: {e}")

    print(f"frames={config.scenario.frames} targets={config.scenario.n_targets} "
          f"gt_boxes={gt.count()} detections={n_dets} seed={config.scenario.seed}")
    print(f"wrote {out / GT_FILE}, {out / DET_FILE}, {out / MANIFEST_FILE}")
    return 0


def _track_variant(args: argparse.Namespace) -> Variant:
    if args.baseline and args.no_pmr:
        raise FlagConflictError("--baseline already disables memory recovery; drop --no-pmr")
    if args.baseline:
        return BASELINE if args.no_ld else get_variant("ByteTrack+LD")
    return Variant(
        name="custom",
        joint_costs=True,
        recovery=not args.no_pmr,
        local_detection=not args.no_ld,
    )


def cmd_track(args: argparse.Namespace) -> int:
    variant = _track_variant(args)
    det_dir = Path(args.det)
    det_path, gt_path, out_path = det_dir / DET_FILE, det_dir / GT_FILE, Path(args.out)
    if out_path.resolve() in (det_path.resolve(), gt_path.resolve()):
        raise FlagConflictError(f"--out {out_path} would overwrite an input file")

    config = RunConfig.load(args.config)
    dets = MotReader(det_path).load_detections()
    gt = None
    if variant.local_detection:
        if not gt_path.exists():
            raise DataIOError(f"Local detection needs {gt_path} for the ROI oracle (or pass --no-ld)")
        gt = MotReader(gt_path).load_trajectories()

    frames = max(list(dets) + (gt.frames() if gt is not None else []), default=0)
    run = run_sequence(dets, config.tracker, variant=variant, gt=gt, noise=config.noise,
                       seed=config.scenario.seed, frames=frames)
    MotWriter(out_path).write_trajectories(run.results)

    local_frames = sum(1 for m in run.modes if m is Mode.LD)
    print(f"frames={run.steps} local_frames={local_frames} output_boxes={run.results.count()} "
          f"tracks={len(run.results.ids())}")
    print(f"steps_per_second={run.steps_per_second:.1f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    gt = MotReader(args.gt).load_trajectories()
    pred = MotReader(args.res).load_trajectories()
    if gt.count() == 0:
        raise InputValidationError(f"Ground truth file {args.gt} has no objects")
    evaluator = TrackingEvaluator(iou_threshold=args.iou_threshold, motp_distance=args.motp_distance)
    print(format_report(evaluator.evaluate(gt, pred, verbose=True)))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    variants: Sequence[Variant] = VARIANTS
    if args.variants:
        variants = [get_variant(name.strip()) for name in args.variants.split(",") if name.strip()]
    config = RunConfig.load(args.config)
    result = run_ablation(args.suite, args.seeds, frames=args.frames, n_targets=args.targets,
                          variants=variants, workers=args.workers, config=config)
    print(f"suite={result.suite} seeds={result.seeds} frames={args.frames} targets={args.targets}")
    print(result.format_table())
    return 0


def cmd_stff_check(args: argparse.Namespace) -> int:
    if args.dump_params:
        dump_params(StffParams.random(args.seed), args.dump_params)
    results = run_invariant_checks(args.seed)
    for check in results:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name:<20} {check.detail}")
    failed = sum(1 for c in results if not c.passed)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skytrack", description="Small aerial target tracking toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="loguru level for stderr output")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="generate a synthetic scenario")
    simulate.add_argument("--config", help="flat key = value run configuration")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--seed", type=int, help="override the scenario seed")
    simulate.set_defaults(handler=cmd_simulate)

    track = commands.add_parser("track", help="run the tracker over a detection directory")
    track.add_argument("--config", help="flat key = value run configuration")
    track.add_argument("--det", required=True, help=f"directory holding {DET_FILE} (and {GT_FILE})")
    track.add_argument("--out", required=True, help="MOT results file")
    track.add_argument("--baseline", action="store_true", help="overlap-only costs, no recovery")
    track.add_argument("--no-pmr", action="store_true", help="disable memory recovery")
    track.add_argument("--no-ld", action="store_true", help="global detection only")
    track.set_defaults(handler=cmd_track)

    evaluate = commands.add_parser("eval", help="score results against ground truth")
    evaluate.add_argument("--gt", required=True)
    evaluate.add_argument("--res", required=True)
    evaluate.add_argument("--iou-threshold", type=float, default=0.5)
    evaluate.add_argument("--motp-distance", action="store_true", help="report MOTP as 1 - mean IoU")
    evaluate.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser("ablate", help="compare tracker variants over a seeded suite")
    ablate.add_argument("--suite", choices=SUITES, default="occlusion")
    ablate.add_argument("--seeds", type=int, default=20)
    ablate.add_argument("--frames", type=int, default=SIM_FRAMES)
    ablate.add_argument("--targets", type=int, default=SIM_TARGETS)
    ablate.add_argument("--workers", type=int, default=ABLATE_WORKERS)
    ablate.add_argument("--variants", help=f"comma-separated subset of: {', '.join(v.name for v in VARIANTS)}")
    ablate.add_argument("--config", help="flat key = value run configuration")
    ablate.set_defaults(handler=cmd_ablate)

    stff_check = commands.add_parser("stff-check", help="run the fusion block invariant checks")
    stff_check.add_argument("--seed", type=int, default=0)
    stff_check.add_argument("--dump-params", help="also write the seeded parameters to this file")
    stff_check.set_defaults(handler=cmd_stff_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Returns:
        0 on success, the error's exit code on a TrackingError
    """
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level)
        return args.handler(args)
    except TrackingError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
