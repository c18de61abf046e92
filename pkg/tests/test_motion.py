import math

import numpy as np
import pytest

from app.core.exceptions import MotionError
from app.models import BoundingBox, Detection, MotionState
from app.services.motion import kf_init, kf_multi_predict, kf_multi_update, kf_predict, kf_update


def _detection(box):
    return Detection(1, BoundingBox(*box), 0.9)


def test_init_mean_from_box():
    state = kf_init(_detection((0, 0, 100, 100)))
    np.testing.assert_array_equal(state.mean, [50, 50, 100, 100, 0, 0, 0, 0])


def test_init_covariance_is_symmetric_positive_definite():
    state = kf_init(_detection((10, 10, 24, 18)))
    np.testing.assert_allclose(state.covariance, state.covariance.T, atol=1e-12)
    np.linalg.cholesky(state.covariance)


def test_init_is_deterministic():
    a = kf_init(_detection((5, 6, 7, 8)))
    b = kf_init(_detection((5, 6, 7, 8)))
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.covariance, b.covariance)


def test_predict_constant_velocity():
    base = kf_init(_detection((0, 0, 100, 100)))
    state = MotionState(np.array([50, 50, 100, 100, 10, 0, 0, 0], dtype=float), base.covariance)
    assert kf_predict(state).center == pytest.approx((60.0, 50.0))


def test_predict_zero_velocity_keeps_center_and_grows_covariance():
    state = kf_init(_detection((0, 0, 40, 40)))
    predicted = kf_predict(state)
    assert predicted.center == state.center
    assert np.trace(predicted.covariance) > np.trace(state.covariance)


def test_update_with_zero_innovation_keeps_prediction():
    predicted = kf_predict(kf_init(_detection((0, 0, 40, 40))))
    posterior = kf_update(predicted, predicted.box)
    assert posterior.center == pytest.approx(predicted.center)


def test_update_shrinks_covariance_diagonal():
    predicted = kf_predict(kf_init(_detection((0, 0, 40, 40))))
    posterior = kf_update(predicted, BoundingBox(3, -2, 41, 39))
    assert np.all(np.diag(posterior.covariance) <= np.diag(predicted.covariance) + 1e-12)
    assert np.trace(posterior.covariance) <= np.trace(predicted.covariance)


def test_converges_on_constant_velocity_path():
    velocity = (2.0, -1.5)
    size = 40.0

    def box_at(k):
        return BoundingBox.from_center(300 + velocity[0] * k, 400 + velocity[1] * k, size, size)

    state = kf_init(box_at(0))
    for k in range(1, 21):
        state = kf_update(kf_predict(state), box_at(k))
    predicted = kf_predict(state).center
    expected = box_at(21).center
    assert math.dist(predicted, expected) < 0.5


@pytest.mark.parametrize("measurement", [
    [math.nan, 0.0, 10.0, 10.0],
    [0.0, math.inf, 10.0, 10.0],
    [1.0, 2.0, 3.0],
])
def test_update_rejects_bad_measurements(measurement):
    state = kf_init(_detection((0, 0, 10, 10)))
    with pytest.raises(MotionError):
        kf_update(state, measurement)


def test_multi_predict_matches_single_predict():
    states = [kf_init(_detection((k * 10.0, 5.0, 10.0 + k, 12.0))) for k in range(4)]
    states = [kf_update(kf_predict(s), BoundingBox(s.box.x + 2, s.box.y, s.box.w, s.box.h)) for s in states]
    batched = kf_multi_predict(states)
    for single, batch in zip(states, batched):
        expected = kf_predict(single)
        np.testing.assert_allclose(batch.mean, expected.mean, atol=1e-12)
        np.testing.assert_allclose(batch.covariance, expected.covariance, atol=1e-9)
    assert kf_multi_predict([]) == []


def test_multi_update_matches_single_update():
    states = [kf_predict(kf_init(_detection((k * 40.0, 5.0, 10.0 + k, 12.0 + 2 * k)))) for k in range(5)]
    boxes = [BoundingBox(s.box.x + 3, s.box.y - 1, s.box.w + 1, s.box.h) for s in states]
    batched = kf_multi_update(states, boxes)
    for state, box, batch in zip(states, boxes, batched):
        expected = kf_update(state, box)
        np.testing.assert_allclose(batch.mean, expected.mean, atol=1e-9)
        np.testing.assert_allclose(batch.covariance, expected.covariance, atol=1e-9)
    assert kf_multi_update([], []) == []
    with pytest.raises(MotionError):
        kf_multi_update(states[:2], boxes[:1])


def test_covariance_stays_positive_definite_over_random_cycles():
    rng = np.random.default_rng(11)
    state = kf_init(_detection((500, 500, 20, 20)))
    for _ in range(10_000):
        state = kf_predict(state)
        cx, cy = state.center
        w = float(np.clip(state.mean[2] + rng.normal(0, 1), 4, 80))
        h = float(np.clip(state.mean[3] + rng.normal(0, 1), 4, 80))
        state = kf_update(state, [cx + rng.normal(0, 3), cy + rng.normal(0, 3), w, h])
        assert np.abs(state.covariance - state.covariance.T).max() <= 1e-9
        np.linalg.cholesky(state.covariance)
    assert np.all(np.diag(state.covariance) > 0)
