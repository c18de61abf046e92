"""
Probabilistic memory recovery for lost tracks.

A lost track's recent history is summarised as 8-dimensional features
(absolute position, reference-relative position, velocity, heading, time-decay
weight) and modelled with a small diagonal Gaussian mixture fitted by EM.
Unmatched high-confidence detections are scored against each mixture; the
score is the normalised kernel match times the mean decay weight.
"""

import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from app.core.config import (
    DECAY_RATE, FRAME_HEIGHT, FRAME_WIDTH, GMM_COVARIANCE_FLOOR,
    GMM_MAX_ITER, GMM_TOLERANCE, PMR_HISTORY_WINDOW, TrackerConfig
)
from app.models import (
    ROI, Assignment, BoundingBox, Detection, GaussianMixture,
    Track, TrackFeature
)

_LOG_2PI = math.log(2.0 * math.pi)
# Rounding allowance when pruning candidates by their score bound
_BOUND_SLACK = 1e-9


def _wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return wrapped + 2.0 * math.pi if wrapped <= -math.pi else wrapped


def _heading(vx: float, vy: float) -> float:
    if vx == 0.0 and vy == 0.0:
        return 0.0
    return _wrap_angle(math.atan2(vy, vx))


def _reference_rect(roi: Optional[Union[ROI, BoundingBox]], frame_dims: Tuple[int, int]) -> BoundingBox:
    if isinstance(roi, ROI):
        return roi.rect
    if isinstance(roi, BoundingBox):
        return roi
    return BoundingBox(0.0, 0.0, float(frame_dims[0]), float(frame_dims[1]))


def _relative(cx: float, cy: float, rect: BoundingBox) -> Tuple[float, float]:
    x_rel = min(1.0, max(0.0, (cx - rect.x) / rect.w))
    y_rel = min(1.0, max(0.0, (cy - rect.y) / rect.h))
    return x_rel, y_rel


def decay_weight(t_current: float, t_i: float, gamma: float) -> float:
    """
    Time-decay weight of a sample taken at t_i, seen from t_current.

    Raises:
        ValueError: If t_i lies in the future
    """
    gap = t_current - t_i
    if gap < 0:
        raise ValueError(f"Sample time {t_i} is after the current time {t_current}")
    return math.exp(-gamma * gap)


def extract_features(track: Track, roi: Optional[Union[ROI, BoundingBox]], t_current: int, *,
                     gamma: float = DECAY_RATE, frame_rate: float = 1.0,
                     window: int = PMR_HISTORY_WINDOW,
                     frame_dims: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT),
                     extrapolate: bool = False) -> List[TrackFeature]:
    """
    Build one feature per entry of the newest `window` history entries, oldest first.

    Args:
        track: Track with at least one history entry
        roi: Reference window for the relative coordinates; the full frame when None
        t_current: Current frame index
        gamma: Decay rate per time unit
        frame_rate: Frames per time unit (1.0 measures decay in frames)
        window: Number of newest entries to use
        frame_dims: Frame size used when no ROI is given
        extrapolate: Project each position to t_current with the track's filtered velocity

    Returns:
        List of TrackFeature

    Raises:
        ValueError: If the track has no history
    """
    if not track.history:
        raise ValueError(f"Track {track.id} has no history to extract features from")

    rect = _reference_rect(roi, frame_dims)
    vx_filtered, vy_filtered = track.motion.velocity if extrapolate else (0.0, 0.0)
    entries = list(track.history)[-window:]
    features = []
    for entry in entries:
        cx, cy = entry.center
        if extrapolate:
            ahead = t_current - entry.frame
            cx += vx_filtered * ahead
            cy += vy_filtered * ahead
        x_rel, y_rel = _relative(cx, cy, rect)
        vx, vy = entry.velocity
        features.append(TrackFeature(
            x_abs=cx,
            y_abs=cy,
            x_rel=x_rel,
            y_rel=y_rel,
            v_x=vx,
            v_y=vy,
            theta=_heading(vx, vy),
            w=decay_weight(t_current / frame_rate, entry.frame / frame_rate, gamma),
        ))
    return features


def candidate_feature(track: Track, detection: Detection, roi: Optional[Union[ROI, BoundingBox]], *,
                      frame_dims: Tuple[int, int] = (FRAME_WIDTH, FRAME_HEIGHT)) -> TrackFeature:
    """Feature of a candidate detection as a continuation of the track's last observation."""
    cx, cy = detection.center
    last = track.history[-1]
    gap = max(1, detection.frame - last.frame)
    vx = (cx - last.center[0]) / gap
    vy = (cy - last.center[1]) / gap
    x_rel, y_rel = _relative(cx, cy, _reference_rect(roi, frame_dims))
    return TrackFeature(cx, cy, x_rel, y_rel, vx, vy, _heading(vx, vy), 1.0)


def adaptive_k(n_samples: int) -> int:
    """Number of mixture components for a sample count: 1 below 6 samples, else 2."""
    if n_samples < 1:
        raise ValueError(f"Need at least one sample, got {n_samples}")
    return min(2, max(1, n_samples // 3))


def _as_matrix(samples: Sequence[Union[TrackFeature, np.ndarray]]) -> np.ndarray:
    rows = [s.as_array() if isinstance(s, TrackFeature) else np.asarray(s, dtype=float) for s in samples]
    return np.atleast_2d(np.array(rows, dtype=float))


def _estimate_log_resp(X: np.ndarray, weights: np.ndarray, means: np.ndarray,
                       variances: np.ndarray) -> Tuple[float, np.ndarray]:
    """Total log-likelihood and log-responsibilities of the data."""
    diff = X[:, None, :] - means[None, :, :]
    log_prob = -0.5 * (
        means.shape[1] * _LOG_2PI
        + np.sum(np.log(variances), axis=1)[None, :]
        + np.sum(diff ** 2 / variances[None, :, :], axis=2)
    )
    weighted = log_prob + np.log(weights)[None, :]
    peak = weighted.max(axis=1)
    log_norm = peak + np.log(np.exp(weighted - peak[:, None]).sum(axis=1))
    return float(np.sum(log_norm)), weighted - log_norm[:, None]


def _m_step(X: np.ndarray, resp: np.ndarray, floor: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = (resp.T @ X) / nk[:, None]
    diff = X[:, None, :] - means[None, :, :]
    variances = np.einsum("nk,nkd->kd", resp, diff ** 2) / nk[:, None]
    weights = nk / nk.sum()
    return weights, means, np.maximum(variances, floor)


def _initialize(X: np.ndarray, k: int, seed: int, floor: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = X.shape[0]
    if k == 1:
        return np.ones(1), X.mean(axis=0, keepdims=True), np.maximum(X.var(axis=0, keepdims=True), floor)

    # Split by rank along the first principal axis.
    centered = X - X.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    if singular.size and singular[0] > 1e-12:
        order = np.argsort(centered @ vt[0], kind="stable")
    else:
        order = np.random.default_rng(seed).permutation(n)
    resp = np.zeros((n, k))
    halves = np.array_split(order, k)
    for component, members in enumerate(halves):
        resp[members, component] = 1.0
    return _m_step(X, resp, floor)


def fit_gmm(samples: Sequence[Union[TrackFeature, np.ndarray]], K: int, seed: int = 0, *,
            floor: float = GMM_COVARIANCE_FLOOR, max_iter: int = GMM_MAX_ITER,
            tol: float = GMM_TOLERANCE) -> GaussianMixture:
    """
    Fit a diagonal-covariance Gaussian mixture with EM.

    Args:
        samples: TrackFeatures or raw feature vectors
        K: Number of components (1 or 2)
        seed: Seed used only when the principal-axis split is degenerate
        floor: Minimum covariance diagonal
        max_iter: Iteration cap
        tol: Stop when the log-likelihood gain falls below this

    Returns:
        GaussianMixture with its log-likelihood trace

    Raises:
        ValueError: If there are fewer samples than components
    """
    X = _as_matrix(samples)
    if K < 1 or X.shape[0] < K or X.shape[0] == 0:
        raise ValueError(f"Cannot fit {K} components to {X.shape[0]} samples")

    weights, means, variances = _initialize(X, K, seed, floor)
    log_likelihood, log_resp = _estimate_log_resp(X, weights, means, variances)
    trace = [log_likelihood]
    converged = False
    for _ in range(max_iter):
        weights, means, variances = _m_step(X, np.exp(log_resp), floor)
        new_log_likelihood, log_resp = _estimate_log_resp(X, weights, means, variances)
        trace.append(new_log_likelihood)
        if new_log_likelihood - log_likelihood < tol:
            converged = True
            break
        log_likelihood = new_log_likelihood

    return GaussianMixture(
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood_trace=tuple(trace),
        converged=converged,
    )


def match_probability(g: GaussianMixture, z: Union[TrackFeature, np.ndarray]) -> float:
    """Peak-normalised mixture kernel: sum of pi_k * exp(-D_k^2 / 2)."""
    point = z.as_array() if isinstance(z, TrackFeature) else np.asarray(z, dtype=float)
    d2 = np.sum((point[None, :] - g.means) ** 2 / g.variances, axis=1)
    return float(min(1.0, max(0.0, np.sum(g.weights * np.exp(-0.5 * d2)))))


def time_constraint(samples: Sequence[TrackFeature]) -> float:
    """Mean decay weight of the samples."""
    if not samples:
        raise ValueError("time_constraint needs at least one sample")
    return sum(s.w for s in samples) / len(samples)


def recovery_score(g: GaussianMixture, samples: Sequence[TrackFeature],
                   z: Union[TrackFeature, np.ndarray]) -> float:
    return match_probability(g, z) * time_constraint(samples)


def _circular_mean(angles: np.ndarray) -> float:
    s, c = float(np.mean(np.sin(angles))), float(np.mean(np.cos(angles)))
    if math.hypot(s, c) < 1e-12:
        return 0.0
    return math.atan2(s, c)


class TrackMemory:
    """Mixture and samples of one lost track against one reference window."""

    def __init__(self, track: Track, rect: BoundingBox, cfg: TrackerConfig, t_current: int):
        self.rect = rect
        self.samples = extract_features(
            track, rect, t_current,
            gamma=cfg.gamma, frame_rate=cfg.frame_rate, window=cfg.pmr_window,
            frame_dims=cfg.frame_dims, extrapolate=True,
        )
        self.scale = np.asarray(cfg.pmr_feature_scale, dtype=float)
        data = _as_matrix(self.samples)
        self.heading = _circular_mean(data[:, 6])
        data[:, 6] = [_wrap_angle(a - self.heading) for a in data[:, 6]]
        k = adaptive_k(len(self.samples))
        self.mixture = fit_gmm(data / self.scale, k, seed=cfg.gmm_seed + track.id)
        self.c_time = time_constraint(self.samples)

    def score(self, z: TrackFeature) -> float:
        point = z.as_array()
        point[6] = _wrap_angle(point[6] - self.heading)
        return match_probability(self.mixture, point / self.scale) * self.c_time


def _extrapolated_span(track: Track, cfg: TrackerConfig, t_current: int) -> Tuple[float, float, float, float, float]:
    """Box spanned by the extrapolated history positions, plus the history's mean decay weight."""
    vx, vy = track.motion.velocity
    rate = cfg.gamma / cfg.frame_rate
    entries = list(track.history)[-cfg.pmr_window:]
    xs, ys, decay = [], [], 0.0
    for entry in entries:
        ahead = t_current - entry.frame
        xs.append(entry.center[0] + vx * ahead)
        ys.append(entry.center[1] + vy * ahead)
        decay += math.exp(-rate * ahead)
    return min(xs), min(ys), max(xs), max(ys), decay / len(entries)


def score_bounds(tracks: Sequence[Track], centers: np.ndarray, cfg: TrackerConfig, t_current: int) -> np.ndarray:
    """
    Upper bounds (n_tracks, n_centers) on recovery scores, without fitting any mixture.

    The extrapolated history positions of a track span a box. Every fitted
    component mean lies inside that box and its variance along an axis is at
    most a quarter of the squared span, or the floor. The distance from a
    candidate to the box therefore bounds its Mahalanobis distance to every
    component from below.
    """
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if not tracks:
        return np.zeros((0, centers.shape[0]))
    spans = np.array([_extrapolated_span(t, cfg, t_current) for t in tracks], dtype=float)
    lo, hi, c_time = spans[:, 0:2], spans[:, 2:4], spans[:, 4]

    scale = cfg.pmr_scale_position
    variance = np.maximum(GMM_COVARIANCE_FLOOR, ((hi - lo) / scale) ** 2 / 4.0)
    outside = np.maximum(0.0, np.maximum(lo[:, None, :] - centers[None, :, :],
                                         centers[None, :, :] - hi[:, None, :])) / scale
    kernel = np.exp(-0.5 * np.sum(outside ** 2 / variance[:, None, :], axis=2))
    return kernel * c_time[:, None]


def recover(lost: Sequence[Track], candidates: Sequence[Detection], cfg: TrackerConfig,
            t_current: int, *, rois: Optional[Dict[int, BoundingBox]] = None) -> Assignment:
    """
    Greedily pair lost tracks with candidate detections by recovery score.

    Pairs scoring above tau_t are taken in descending score order, each track
    and detection at most once; ties go to the lower track id, then the lower
    detection index. A track's mixture is only fitted when some candidate's
    score bound reaches tau_t.

    Args:
        lost: Lost tracks (predicted to the current frame)
        candidates: Unmatched high-confidence detections in global coordinates
        cfg: Tracker configuration
        t_current: Current frame
        rois: ROI rectangles by id, for candidates produced by local detection

    Returns:
        Assignment of lost-track indices to candidate indices
    """
    if not lost or not candidates:
        return Assignment.from_pairs([], len(lost), len(candidates))

    with_history = [li for li, track in enumerate(lost) if track.history]
    centers = np.array([d.center for d in candidates], dtype=float)
    bounds = score_bounds([lost[li] for li in with_history], centers, cfg, t_current)
    scored = []
    for row, li in enumerate(with_history):
        track = lost[li]
        reachable = np.flatnonzero(bounds[row] > cfg.tau_t - _BOUND_SLACK)
        models: Dict[Tuple[float, ...], TrackMemory] = {}
        for dj in map(int, reachable):
            det = candidates[dj]
            roi = rois.get(det.roi_id) if rois and det.roi_id is not None else None
            rect = _reference_rect(roi, cfg.frame_dims)
            key = rect.as_tuple()
            if key not in models:
                models[key] = TrackMemory(track, rect, cfg, t_current)
            model = models[key]
            score = model.score(candidate_feature(track, det, rect, frame_dims=cfg.frame_dims))
            if score > cfg.tau_t:
                scored.append((-score, track.id, dj, li))

    scored.sort()
    used_tracks, used_dets, pairs = set(), set(), []
    for neg_score, track_id, dj, li in scored:
        if li in used_tracks or dj in used_dets:
            continue
        used_tracks.add(li)
        used_dets.add(dj)
        pairs.append((li, dj))
        logger.debug(f"Frame {t_current}: track {track_id} recovered with score {-neg_score:.3f}")
    return Assignment.from_pairs(pairs, len(lost), len(candidates))
