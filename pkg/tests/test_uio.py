import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robokey.models import ModelParams, unicycle_step
from robokey.uio import EstimationError, ObserverState, estimate_input_dd, linearize, uio_step

P = ModelParams()


def _fd_jacobians(x, u, p, h=1e-6):
    A = np.empty((3, 3))
    B = np.empty((3, 2))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        A[:, i] = (unicycle_step(x + e, u, p) - unicycle_step(x - e, u, p)) / (2 * h)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        B[:, i] = (unicycle_step(x, u + e, p) - unicycle_step(x, u - e, p)) / (2 * h)
    return A, B


def test_linearization_example():
    lin = linearize(np.array([0.4, -0.2, 0.0]), np.array([1.0, 0.3]), P)
    np.testing.assert_allclose(lin.A, [[1, 0, 0], [0, 1, 0.2], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(lin.G, [[0.2, 0], [0, 0], [0, 0.2]], atol=1e-15)
    np.testing.assert_array_equal(linearize(np.array([0, 0, 1.0]), np.array([0.0, 2.0]), P).A,
                                  np.eye(3))


def test_linearization_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(100):
        x = rng.uniform([-2, -2, -2 * np.pi], [2, 2, 2 * np.pi])
        u = rng.uniform([-0.5, -5], [0.5, 5])
        A, B = _fd_jacobians(x, u, P)
        lin = linearize(x, u, P)
        np.testing.assert_allclose(lin.A, A, atol=1e-6)
        np.testing.assert_allclose(lin.B, B, atol=1e-6)


def _noise_free_run(bias, steps=60, p=P, seed=0):
    rng = np.random.default_rng(seed)
    x = np.array([0.1, -0.3, 0.7])
    obs = ObserverState(x_hat=x.copy())
    out = []
    for _ in range(steps):
        u = np.array([rng.uniform(-0.2, 0.2), rng.uniform(-2, 2)])
        x = unicycle_step(x, u + bias, p)
        obs, delta, x_hat = uio_step(obs, u, x, p)
        out.append((delta, x_hat, x, obs.P))
    return out


@pytest.mark.parametrize("bias", [(0.035, 0.0), (-0.035, 0.0), (0.0, 0.4), (0.01, -0.2)])
def test_noise_free_bias_recovery(bias):
    for delta, x_hat, x, _ in _noise_free_run(np.array(bias)):
        np.testing.assert_allclose(delta, bias, atol=1e-9)
        np.testing.assert_allclose(x_hat, x, atol=1e-9)


def test_zero_bias_tracks_exactly():
    for delta, x_hat, x, _ in _noise_free_run(np.zeros(2)):
        np.testing.assert_allclose(delta, 0, atol=1e-12)
        np.testing.assert_allclose(x_hat, x, atol=1e-12)


def test_covariance_stays_symmetric_psd():
    for *_, P_k in _noise_free_run(np.array([0.02, 0.1])):
        np.testing.assert_array_equal(P_k, P_k.T)
        assert np.linalg.eigvalsh(P_k).min() > -1e-12


def test_bias_recovered_under_exact_zero_covariances():
    p = ModelParams(W=0.0, V=0.0)
    for delta, *_ in _noise_free_run(np.array([0.035, 0.0]), p=p, steps=20):
        np.testing.assert_allclose(delta, [0.035, 0], atol=1e-9)


def test_singular_innovation_without_regularization():
    p = ModelParams(W=0.0, V=0.0)
    with pytest.raises(EstimationError, match="ill-conditioned innovation covariance"):
        uio_step(ObserverState(), np.array([0.1, 0.0]), np.zeros(3), p, regularization=0.0)


def test_unidentifiable_input(monkeypatch):
    import robokey.uio as uio

    def rank_one(x_hat, u, p):
        lin = linearize(x_hat, u, p)
        G = lin.G.copy()
        G[:, 1] = G[:, 0]
        return uio.Linearization(lin.A, lin.B, G)

    monkeypatch.setattr(uio, "linearize", rank_one)
    with pytest.raises(EstimationError, match="input not identifiable"):
        uio_step(ObserverState(), np.array([0.1, 0.0]), np.zeros(3), P)


def test_estimate_input_dd_examples():
    np.testing.assert_allclose(estimate_input_dd([0.035, 0], [0.1, 0], P), [0.135 / 0.021] * 2,
                               rtol=1e-14)
    np.testing.assert_allclose(estimate_input_dd([-0.035, 0], [0.1, 0], P), [0.065 / 0.021] * 2,
                               rtol=1e-14)
    np.testing.assert_allclose(estimate_input_dd([0, 0], [0.05, 1.0], P), P.H_inv @ [0.05, 1.0],
                               rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.1, 0.1), st.floats(-1, 1), st.integers(0, 2**32 - 1))
def test_bias_recovery_property(dv, dw, seed):
    for delta, *_ in _noise_free_run(np.array([dv, dw]), steps=10, seed=seed):
        np.testing.assert_allclose(delta, [dv, dw], atol=1e-9)
