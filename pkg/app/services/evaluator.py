"""
Multi-object tracking evaluation.
Computes CLEAR metrics (MOTA, MOTP, IDSW), identity metrics (IDF1, IDP, IDR)
and HOTA with its detection and association parts for a ground-truth and a
predicted trajectory set.
"""

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from loguru import logger

from app.core.config import HOTA_ALPHAS, MATCH_IOU_THRESHOLD
from app.models import MetricsReport, TrajectorySet, boxes_to_array, iou_matrix
from app.services.association import linear_assignment


@dataclass(frozen=True)
class FrameCorrespondence:
    """Matches of one frame as (gt_id, pred_id, iou) plus the unmatched ids."""
    frame: int
    matches: Tuple[Tuple[int, int, float], ...]
    unmatched_gt: Tuple[int, ...]
    unmatched_pred: Tuple[int, ...]


def _frame_overlaps(gt: TrajectorySet, pred: TrajectorySet, frame: int):
    gt_objects = gt.get(frame)
    pred_objects = pred.get(frame)
    overlaps = iou_matrix(
        boxes_to_array([b for _, b in gt_objects]),
        boxes_to_array([b for _, b in pred_objects]),
    )
    return [i for i, _ in gt_objects], [i for i, _ in pred_objects], overlaps


def _max_overlap_matching(overlaps: np.ndarray, allowed: np.ndarray) -> List[Tuple[int, int]]:
    """Largest matching on allowed pairs, ties broken by the larger IoU sum."""
    n, m = overlaps.shape
    return linear_assignment(1.0 - overlaps, allowed, unmatched_cost=n + m + 1)


def _all_frames(gt: TrajectorySet, pred: TrajectorySet) -> List[int]:
    return sorted(set(gt.frames()) | set(pred.frames()))


def match_frames(gt: TrajectorySet, pred: TrajectorySet,
                 iou_threshold: float = MATCH_IOU_THRESHOLD) -> List[FrameCorrespondence]:
    """
    Per-frame CLEAR matching.

    A ground-truth object keeps the prediction it was last matched to while
    their IoU stays above the threshold; the remaining objects are matched to
    maximise the number of pairs and then the IoU sum.

    Returns:
        One FrameCorrespondence per frame present in either set, in frame order
    """
    last_match: Dict[int, int] = {}
    result = []
    for frame in _all_frames(gt, pred):
        gt_ids, pred_ids, overlaps = _frame_overlaps(gt, pred, frame)
        pred_pos = {p: j for j, p in enumerate(pred_ids)}
        pairs = []
        used_rows, used_cols = set(), set()

        for i, g in enumerate(gt_ids):
            j = pred_pos.get(last_match.get(g))
            if j is not None and j not in used_cols and overlaps[i, j] >= iou_threshold:
                pairs.append((i, j))
                used_rows.add(i)
                used_cols.add(j)

        rows = [i for i in range(len(gt_ids)) if i not in used_rows]
        cols = [j for j in range(len(pred_ids)) if j not in used_cols]
        if rows and cols:
            sub = overlaps[np.ix_(rows, cols)]
            for r, c in _max_overlap_matching(sub, sub >= iou_threshold):
                pairs.append((rows[r], cols[c]))

        matches = tuple(sorted((gt_ids[i], pred_ids[j], float(overlaps[i, j])) for i, j in pairs))
        for g, p, _ in matches:
            last_match[g] = p
        matched_gt = {g for g, _, _ in matches}
        matched_pred = {p for _, p, _ in matches}
        result.append(FrameCorrespondence(
            frame=frame,
            matches=matches,
            unmatched_gt=tuple(g for g in gt_ids if g not in matched_gt),
            unmatched_pred=tuple(p for p in pred_ids if p not in matched_pred),
        ))
    return result


def idsw_count(correspondences: Sequence[FrameCorrespondence]) -> int:
    """Number of times a GT id's matched prediction changes between its matched frames."""
    previous: Dict[int, int] = {}
    switches = 0
    for corr in sorted(correspondences, key=lambda c: c.frame):
        for g, p, _ in corr.matches:
            if g in previous and previous[g] != p:
                switches += 1
            previous[g] = p
    return switches


def mota(num_gt: int, fp: int, fn: int, idsw: int) -> float:
    """1 - (FP + FN + IDSW) / GT; unbounded below."""
    if num_gt <= 0:
        raise ValueError("MOTA is undefined without ground-truth objects")
    return 1.0 - (fp + fn + idsw) / num_gt


def motp(ious: Sequence[float], distance: bool = False) -> float:
    """Mean IoU of matched pairs, or 1 - mean IoU with the distance convention."""
    if len(ious) == 0:
        raise ValueError("MOTP is undefined without matches")
    mean_iou = float(np.mean(ious))
    return 1.0 - mean_iou if distance else mean_iou


@dataclass(frozen=True)
class IdentityCounts:
    idtp: int
    num_gt: int
    num_pred: int


def identity_counts(gt: TrajectorySet, pred: TrajectorySet,
                    iou_threshold: float = MATCH_IOU_THRESHOLD) -> IdentityCounts:
    """Correctly identified detections under the best one-to-one id correspondence."""
    gt_ids, pred_ids = gt.ids(), pred.ids()
    num_gt, num_pred = gt.count(), pred.count()
    if not gt_ids or not pred_ids:
        return IdentityCounts(0, num_gt, num_pred)

    g_pos = {g: i for i, g in enumerate(gt_ids)}
    p_pos = {p: j for j, p in enumerate(pred_ids)}
    co_located = np.zeros((len(gt_ids), len(pred_ids)), dtype=float)
    for frame in _all_frames(gt, pred):
        frame_gt, frame_pred, overlaps = _frame_overlaps(gt, pred, frame)
        for i, j in zip(*np.nonzero(overlaps >= iou_threshold)):
            co_located[g_pos[frame_gt[i]], p_pos[frame_pred[j]]] += 1

    top = co_located.max()
    if top == 0:
        return IdentityCounts(0, num_gt, num_pred)
    # Minimising (top - IDTP) / top with half-cost unmatched sides maximises total IDTP.
    pairs = linear_assignment((top - co_located) / top, co_located > 0, unmatched_cost=0.5)
    idtp = int(sum(co_located[i, j] for i, j in pairs))
    return IdentityCounts(idtp, num_gt, num_pred)


def idf1(gt: TrajectorySet, pred: TrajectorySet,
         iou_threshold: float = MATCH_IOU_THRESHOLD) -> Tuple[float, float, float]:
    """
    Identity F1 with its precision and recall.

    Returns:
        (idf1, idp, idr); idp is 0 when there are no predictions

    Raises:
        ValueError: If the ground truth is empty
    """
    counts = identity_counts(gt, pred, iou_threshold)
    return _identity_scores(counts)


def _identity_scores(counts: IdentityCounts) -> Tuple[float, float, float]:
    if counts.num_gt == 0:
        raise ValueError("IDF1 is undefined without ground-truth objects")
    idp = counts.idtp / counts.num_pred if counts.num_pred else 0.0
    idr = counts.idtp / counts.num_gt
    score = 2.0 * counts.idtp / (counts.num_gt + counts.num_pred)
    return score, idp, idr


@dataclass(frozen=True)
class HotaResult:
    hota: float
    deta: float
    assa: float
    hota_per_alpha: Tuple[float, ...]
    deta_per_alpha: Tuple[float, ...]
    assa_per_alpha: Tuple[float, ...]


def hota_details(gt: TrajectorySet, pred: TrajectorySet,
                 alphas: Sequence[float] = HOTA_ALPHAS) -> HotaResult:
    """HOTA, DetA and AssA per localisation threshold and averaged over thresholds."""
    if gt.count() == 0:
        raise ValueError("HOTA is undefined without ground-truth objects")

    gt_count: Dict[int, int] = defaultdict(int)
    pred_count: Dict[int, int] = defaultdict(int)
    frames = []
    for frame in _all_frames(gt, pred):
        gt_ids, pred_ids, overlaps = _frame_overlaps(gt, pred, frame)
        for g in gt_ids:
            gt_count[g] += 1
        for p in pred_ids:
            pred_count[p] += 1
        frames.append((gt_ids, pred_ids, overlaps))

    num_gt, num_pred = gt.count(), pred.count()
    per_h, per_d, per_a = [], [], []
    for alpha in alphas:
        pair_counts: Dict[Tuple[int, int], int] = defaultdict(int)
        tp = 0
        for gt_ids, pred_ids, overlaps in frames:
            if not gt_ids or not pred_ids:
                continue
            for i, j in _max_overlap_matching(overlaps, overlaps >= alpha):
                pair_counts[(gt_ids[i], pred_ids[j])] += 1
                tp += 1
        fn, fp = num_gt - tp, num_pred - tp
        if tp == 0:
            per_h.append(0.0)
            per_d.append(0.0)
            per_a.append(0.0)
            continue
        det_a = tp / (tp + fn + fp)
        ass_sum = 0.0
        for (g, p), tpa in pair_counts.items():
            ass_sum += tpa * tpa / (gt_count[g] + pred_count[p] - tpa)
        ass_a = ass_sum / tp
        per_d.append(det_a)
        per_a.append(ass_a)
        per_h.append(math.sqrt(det_a * ass_a))

    return HotaResult(
        hota=float(np.mean(per_h)),
        deta=float(np.mean(per_d)),
        assa=float(np.mean(per_a)),
        hota_per_alpha=tuple(per_h),
        deta_per_alpha=tuple(per_d),
        assa_per_alpha=tuple(per_a),
    )


def hota(gt: TrajectorySet, pred: TrajectorySet,
         alphas: Sequence[float] = HOTA_ALPHAS) -> Tuple[float, float, float]:
    """(HOTA, DetA, AssA) averaged over the localisation thresholds."""
    result = hota_details(gt, pred, alphas)
    return result.hota, result.deta, result.assa


def combine_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Aggregate per-sequence reports: counters are summed, HOTA parts averaged."""
    if not reports:
        return MetricsReport()
    num_gt = sum(r.num_gt for r in reports)
    num_pred = sum(r.num_pred for r in reports)
    idtp = sum(r.idtp for r in reports)
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    idsw = sum(r.idsw for r in reports)
    score, idp, idr = _identity_scores(IdentityCounts(idtp, num_gt, num_pred)) if num_gt else (0.0, 0.0, 0.0)
    return MetricsReport(
        idsw=idsw,
        idf1=score,
        idp=idp,
        idr=idr,
        mota=mota(num_gt, fp, fn, idsw) if num_gt else 0.0,
        motp=sum(r.motp * r.tp for r in reports) / tp if tp else 0.0,
        hota=float(np.mean([r.hota for r in reports])),
        deta=float(np.mean([r.deta for r in reports])),
        assa=float(np.mean([r.assa for r in reports])),
        fp=fp,
        fn=fn,
        tp=tp,
        num_gt=num_gt,
        num_pred=num_pred,
        idtp=idtp,
    )


class TrackingEvaluator:
    """
    Evaluates predicted trajectories against ground truth.
    Runs the CLEAR, identity and HOTA passes and collects them in a MetricsReport.
    """

    def __init__(self, iou_threshold: float = MATCH_IOU_THRESHOLD, motp_distance: bool = False,
                 include_hota: bool = True, alphas: Sequence[float] = HOTA_ALPHAS):
        self.iou_threshold = iou_threshold
        self.motp_distance = motp_distance
        self.include_hota = include_hota
        self.alphas = tuple(alphas)

    def evaluate(self, gt: TrajectorySet, pred: TrajectorySet, verbose: bool = False) -> MetricsReport:
        """
        Evaluate one sequence.

        Args:
            gt: Ground-truth trajectories
            pred: Predicted trajectories
            verbose: Log a summary block at INFO level

        Returns:
            MetricsReport with all metrics
        """
        if gt.count() == 0:
            raise ValueError("Cannot evaluate against empty ground truth")

        correspondences = match_frames(gt, pred, self.iou_threshold)
        matched_ious = [m[2] for c in correspondences for m in c.matches]
        tp = len(matched_ious)
        num_gt, num_pred = gt.count(), pred.count()
        fn, fp = num_gt - tp, num_pred - tp
        switches = idsw_count(correspondences)

        counts = identity_counts(gt, pred, self.iou_threshold)
        id_f1, id_p, id_r = _identity_scores(counts)

        report = MetricsReport(
            idsw=switches,
            idf1=id_f1,
            idp=id_p,
            idr=id_r,
            mota=mota(num_gt, fp, fn, switches),
            motp=motp(matched_ious, self.motp_distance) if matched_ious else 0.0,
            fp=fp,
            fn=fn,
            tp=tp,
            num_gt=num_gt,
            num_pred=num_pred,
            idtp=counts.idtp,
        )
        if self.include_hota:
            details = hota_details(gt, pred, self.alphas)
            report.hota, report.deta, report.assa = details.hota, details.deta, details.assa
            report.hota_per_alpha = details.hota_per_alpha
            report.deta_per_alpha = details.deta_per_alpha
            report.assa_per_alpha = details.assa_per_alpha

        if verbose:
            logger.info("=" * 60)
            logger.info("Evaluation Results:")
            logger.info("=" * 60)
            for line in report.get_summary().splitlines():
                logger.info(f"  {line}")
        return report
