"""
Constant-velocity Kalman filter over box center and size.
Noise levels scale with the box height so small and large targets carry
comparable relative uncertainty.
"""

from typing import List, Sequence, Union

import numpy as np
import scipy.linalg

from app.core.config import (
    MEASUREMENT_NOISE_WEIGHT, MIN_NOISE_HEIGHT,
    POSITION_NOISE_WEIGHT, VELOCITY_NOISE_WEIGHT
)
from app.core.exceptions import MotionError
from app.models import BoundingBox, Detection, MotionState

_NDIM = 4

_MOTION_MATRIX = np.eye(2 * _NDIM)
_MOTION_MATRIX[:_NDIM, _NDIM:] = np.eye(_NDIM)

_UPDATE_MATRIX = np.eye(_NDIM, 2 * _NDIM)


def _noise_height(mean: np.ndarray) -> float:
    return max(float(mean[3]), MIN_NOISE_HEIGHT)


def _symmetrize(covariance: np.ndarray) -> np.ndarray:
    return 0.5 * (covariance + covariance.T)


def _process_noise(height: float) -> np.ndarray:
    std = np.r_[
        np.full(_NDIM, POSITION_NOISE_WEIGHT * height),
        np.full(_NDIM, VELOCITY_NOISE_WEIGHT * height),
    ]
    return np.diag(np.square(std))


def _as_measurement(measurement: Union[BoundingBox, Detection, Sequence[float], np.ndarray]) -> np.ndarray:
    if isinstance(measurement, Detection):
        measurement = measurement.box
    if isinstance(measurement, BoundingBox):
        cx, cy = measurement.center
        z = np.array([cx, cy, measurement.w, measurement.h], dtype=float)
    else:
        z = np.asarray(measurement, dtype=float).reshape(-1)
        if z.shape != (_NDIM,):
            raise MotionError(f"Measurement must have {_NDIM} values [cx, cy, w, h], got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise MotionError(f"Measurement must be finite, got {z.tolist()}")
    return z


def kf_init(detection: Union[Detection, BoundingBox]) -> MotionState:
    """
    Start a motion state from a detection with zero velocity.

    Args:
        detection: First detection (or bare box) of a track

    Returns:
        MotionState with size-scaled initial uncertainty
    """
    box = detection.box if isinstance(detection, Detection) else detection
    cx, cy = box.center
    mean = np.array([cx, cy, box.w, box.h, 0.0, 0.0, 0.0, 0.0], dtype=float)
    height = max(box.h, MIN_NOISE_HEIGHT)
    std = np.r_[
        np.full(_NDIM, 2 * POSITION_NOISE_WEIGHT * height),
        np.full(_NDIM, 10 * VELOCITY_NOISE_WEIGHT * height),
    ]
    return MotionState(mean=mean, covariance=np.diag(np.square(std)))


def kf_predict(state: MotionState) -> MotionState:
    """Propagate one frame of constant velocity and grow the covariance."""
    mean = _MOTION_MATRIX @ state.mean
    covariance = _MOTION_MATRIX @ state.covariance @ _MOTION_MATRIX.T + _process_noise(_noise_height(state.mean))
    return MotionState(mean=mean, covariance=_symmetrize(covariance))


def kf_multi_predict(states: Sequence[MotionState]) -> List[MotionState]:
    """Predict many states in one batched pass; equivalent to kf_predict on each."""
    if not states:
        return []
    means = np.stack([s.mean for s in states])
    covariances = np.stack([s.covariance for s in states])
    heights = np.maximum(means[:, 3], MIN_NOISE_HEIGHT)
    std = np.concatenate([
        np.outer(heights, np.full(_NDIM, POSITION_NOISE_WEIGHT)),
        np.outer(heights, np.full(_NDIM, VELOCITY_NOISE_WEIGHT)),
    ], axis=1)
    noise = np.zeros_like(covariances)
    idx = np.arange(2 * _NDIM)
    noise[:, idx, idx] = np.square(std)

    means = means @ _MOTION_MATRIX.T
    covariances = _MOTION_MATRIX @ covariances @ _MOTION_MATRIX.T + noise
    covariances = 0.5 * (covariances + np.transpose(covariances, (0, 2, 1)))
    return [MotionState(mean=m, covariance=c) for m, c in zip(means, covariances)]


def kf_update(state: MotionState, measurement: Union[BoundingBox, Detection, Sequence[float], np.ndarray]) -> MotionState:
    """
    Correct a predicted state with a box measurement.

    Args:
        state: Predicted motion state
        measurement: Observed box, detection or [cx, cy, w, h] vector

    Returns:
        Posterior MotionState

    Raises:
        MotionError: If the measurement is not finite
    """
    z = _as_measurement(measurement)
    height = _noise_height(state.mean)
    innovation_noise = np.diag(np.square(np.full(_NDIM, MEASUREMENT_NOISE_WEIGHT * height)))

    projected_mean = _UPDATE_MATRIX @ state.mean
    projected_cov = _UPDATE_MATRIX @ state.covariance @ _UPDATE_MATRIX.T + innovation_noise

    chol, lower = scipy.linalg.cho_factor(projected_cov, lower=True, check_finite=False)
    kalman_gain = scipy.linalg.cho_solve(
        (chol, lower), (state.covariance @ _UPDATE_MATRIX.T).T, check_finite=False
    ).T

    innovation = z - projected_mean
    mean = state.mean + innovation @ kalman_gain.T
    covariance = state.covariance - kalman_gain @ projected_cov @ kalman_gain.T
    return MotionState(mean=mean, covariance=_symmetrize(covariance))


def kf_multi_update(states: Sequence[MotionState],
                    measurements: Sequence[Union[BoundingBox, Detection, Sequence[float], np.ndarray]]) -> List[MotionState]:
    """
    Correct many states in one batched pass; equivalent to kf_update on each pair.

    Raises:
        MotionError: If the counts differ or a measurement is not finite
    """
    if len(states) != len(measurements):
        raise MotionError(f"Got {len(states)} states but {len(measurements)} measurements")
    if not states:
        return []
    z = np.stack([_as_measurement(m) for m in measurements])
    means = np.stack([s.mean for s in states])
    covariances = np.stack([s.covariance for s in states])
    heights = np.maximum(means[:, 3], MIN_NOISE_HEIGHT)

    projected_cov = covariances[:, :_NDIM, :_NDIM] + \
        np.square(MEASUREMENT_NOISE_WEIGHT * heights)[:, None, None] * np.eye(_NDIM)
    cross = covariances[:, :, :_NDIM]
    kalman_gain = np.transpose(np.linalg.solve(projected_cov, np.transpose(cross, (0, 2, 1))), (0, 2, 1))

    innovation = z - means[:, :_NDIM]
    means = means + np.einsum("kij,kj->ki", kalman_gain, innovation)
    covariances = covariances - kalman_gain @ projected_cov @ np.transpose(kalman_gain, (0, 2, 1))
    covariances = 0.5 * (covariances + np.transpose(covariances, (0, 2, 1)))
    return [MotionState(mean=m, covariance=c) for m, c in zip(means, covariances)]
