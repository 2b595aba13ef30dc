import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robokey.models import (ConfigurationError, ModelParams, NoiseDraw, NoiseStream,
                            diff_drive_step, input_transform, input_transform_inv, measure,
                            saturate, unicycle_step, wrap_angle)

P = ModelParams()
finite = st.floats(-50, 50, allow_nan=False)


def test_input_transform_values():
    np.testing.assert_allclose(input_transform([5, 5], P), [0.105, 0.0], atol=1e-15)
    np.testing.assert_array_equal(input_transform([0, 0], P), [0, 0])
    v, w = input_transform([10, -10], P)
    assert v == 0
    assert w == pytest.approx(20 * 0.021 / 0.1047, rel=1e-15)
    assert w == pytest.approx(4.0114613, abs=1e-7)


def test_inverse_transform_values():
    np.testing.assert_allclose(input_transform_inv([0.105, 0], P), [5, 5], rtol=1e-14)
    np.testing.assert_array_equal(input_transform_inv([0, 0], P), [0, 0])
    np.testing.assert_allclose(input_transform_inv([0.135, 0], P), [0.135 / 0.021] * 2, rtol=1e-14)


def test_matrix_forms_agree_with_functions():
    u = np.array([3.0, -1.5])
    np.testing.assert_allclose(P.H @ u, input_transform(u, P), rtol=1e-14)
    np.testing.assert_allclose(P.H @ P.H_inv, np.eye(2), atol=1e-14)


@given(finite, finite)
def test_transform_round_trip(wr, wl):
    back = input_transform_inv(input_transform([wr, wl], P), P)
    np.testing.assert_allclose(back, [wr, wl], atol=1e-11)


def test_diff_drive_examples():
    np.testing.assert_allclose(diff_drive_step([0, 0, 0], [5, 5], P), [0.021, 0, 0], atol=1e-15)
    np.testing.assert_array_equal(diff_drive_step([0, 0, 0], [0, 0], P), [0, 0, 0])
    np.testing.assert_allclose(diff_drive_step([0, 0, 0], [10, -10], P),
                               [0, 0, 0.2 * 0.021 / 0.1047 * 20], atol=1e-15)
    assert diff_drive_step([0, 0, 0], [10, -10], P)[2] == pytest.approx(0.8022923, abs=1e-7)


def test_unicycle_examples():
    out = unicycle_step([0, 0, math.pi / 2], [0.5, 0.1], P)
    np.testing.assert_allclose(out, [0, 0.1, math.pi / 2 + 0.02], atol=1e-15)
    x = np.array([0.3, -2.0, 7.5])
    np.testing.assert_array_equal(unicycle_step(x, [0, 0], P), x)


def test_heading_is_not_wrapped():
    x = np.array([0.0, 0.0, 3.1])
    out = unicycle_step(x, [0.0, 1.0], P)
    assert out[2] == pytest.approx(3.3)
    assert wrap_angle(out[2]) == pytest.approx(3.3 - 2 * math.pi)


def test_noise_enters_additively():
    n = NoiseDraw(np.array([0.1, -0.2, 0.3]), np.array([0.01, -0.01, 0.0]))
    np.testing.assert_allclose(unicycle_step([0, 0, 0], [0, 0], P, n), n.zeta)
    np.testing.assert_array_equal(measure([1, 2, 0.5], P), [1, 2, 0.5])
    np.testing.assert_allclose(measure([0, 0, 0], P, n), [0.01, -0.01, 0])


@pytest.mark.parametrize("bad", [[np.nan, 0, 0], [0, np.inf, 0]])
def test_non_finite_state_rejected(bad):
    with pytest.raises(ValueError):
        diff_drive_step(bad, [1, 1], P)
    with pytest.raises(ValueError):
        unicycle_step(bad, [1, 1], P)


def test_parameter_validation():
    with pytest.raises(ConfigurationError):
        ModelParams(r=0)
    with pytest.raises(ConfigurationError):
        ModelParams(W=-np.eye(3))
    with pytest.raises(ConfigurationError):
        ModelParams(output_map="range-bearing")
    assert np.array_equal(ModelParams(W=2.0).W, 2.0 * np.eye(3))


def test_saturation_clips_each_wheel():
    np.testing.assert_array_equal(saturate([50, -50], P), [38, -38])
    np.testing.assert_array_equal(saturate([5, -5], P), [5, -5])


def test_models_equivalent_over_random_trajectory():
    rng = np.random.default_rng(7)
    x_d = x_u = np.zeros(3)
    for _ in range(1000):
        u = rng.uniform(-38, 38, size=2)
        n = NoiseDraw(rng.normal(0, 1e-3, 3), np.zeros(3))
        x_d = diff_drive_step(x_d, u, P, n)
        x_u = unicycle_step(x_u, input_transform(u, P), P, n)
        assert np.max(np.abs(x_d - x_u)) <= 1e-12


def test_noise_stream_reproducible_and_calibrated():
    W = np.array([[2e-4, 5e-5, 0], [5e-5, 1e-4, 0], [0, 0, 3e-4]])
    V = 1e-4 * np.eye(3)
    a, b = NoiseStream(W, V, 1, 2), NoiseStream(W, V, 1, 2)
    for _ in range(5):
        da, db = a.draw(), b.draw()
        np.testing.assert_array_equal(da.zeta, db.zeta)
        np.testing.assert_array_equal(da.xi, db.xi)
    draws = np.array([a.draw().zeta for _ in range(40_000)])
    cov = np.cov(draws.T)
    # 5% relative agreement on the diagonal, loose absolute on the rest
    np.testing.assert_allclose(np.diag(cov), np.diag(W), rtol=0.05)
    np.testing.assert_allclose(cov, W, atol=2e-5)


def test_zero_covariance_gives_zero_noise():
    s = NoiseStream(np.zeros((3, 3)), np.zeros((3, 3)), 0, 0)
    d = s.draw()
    assert not d.zeta.any() and not d.xi.any()


def test_process_stream_independent_of_measurement_covariance():
    a = NoiseStream(np.eye(3), 1e-4 * np.eye(3), 5, 6)
    b = NoiseStream(np.eye(3), 1e-2 * np.eye(3), 5, 6)
    np.testing.assert_array_equal(a.draw().zeta, b.draw().zeta)
