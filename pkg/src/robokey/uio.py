"""Extended Kalman filter with simultaneous input-bias estimation.

The observer runs on unicycle coordinates.  Each step takes the nominal
input applied at ``k-1`` and the measurement at ``k`` and returns the bias
estimate for ``k-1`` plus the filtered state at ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .models import IDENTITY_OUTPUT, ConfigurationError, ModelParams, input_transform_inv, unicycle_step

AUTO_REGULARIZATION = 1e-12
# reciprocal condition number below which a matrix is treated as singular
_RCOND_MIN = 1e-15


class EstimationError(RuntimeError):
    pass


class Linearization(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray


@dataclass(frozen=True)
class ObserverState:
    x_hat: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    delta_hat: np.ndarray = field(default_factory=lambda: np.zeros(2))


def linearize(x_hat, u, p: ModelParams) -> Linearization:
    th = x_hat[2]
    v = u[0]
    c, s = np.cos(th), np.sin(th)
    A = np.array([[1.0, 0.0, -p.T * v * s],
                  [0.0, 1.0, p.T * v * c],
                  [0.0, 0.0, 1.0]])
    B = p.T * np.array([[c, 0.0], [s, 0.0], [0.0, 1.0]])
    return Linearization(A, B, B.copy())


def _inverse(m: np.ndarray, message: str) -> np.ndarray:
    try:
        inv = np.linalg.inv(m)
    except np.linalg.LinAlgError:
        raise EstimationError(message) from None
    # reciprocal 1-norm condition number
    scale = np.abs(m).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
    if not np.isfinite(scale) or scale == 0 or 1.0 / scale < _RCOND_MIN:
        raise EstimationError(message)
    return inv


def uio_step(obs: ObserverState, u_prev, y, p: ModelParams,
             regularization: float | None = None):
    """One observer recursion.

    ``regularization`` is added to the diagonal of the innovation covariance
    before inversion.  ``None`` means: only when both ``W`` and ``V`` are
    identically zero.

    Returns ``(new_state, delta_hat_prev, x_hat)``.
    """
    if p.output_map != IDENTITY_OUTPUT:
        raise ConfigurationError("the observer requires the full-state identity output map")
    if regularization is None:
        regularization = AUTO_REGULARIZATION if not (p.W.any() or p.V.any()) else 0.0
    W, V = p.W, p.V
    I3 = np.eye(3)
    u_prev = np.asarray(u_prev, dtype=float)
    y = np.asarray(y, dtype=float)
    x_prev, P = obs.x_hat, obs.P

    A, _, G = linearize(x_prev, u_prev, p)

    # input estimation
    P_tilde = A @ P @ A.T + W
    R_star = P_tilde + V + regularization * I3
    Xi = G.T @ _inverse(R_star, "ill-conditioned innovation covariance")
    M = _inverse(Xi @ G, "input not identifiable at current linearization") @ Xi
    delta_hat = M @ (y - unicycle_step(x_prev, u_prev, p))

    # state prediction
    x_pred = unicycle_step(x_prev, u_prev + delta_hat, p)
    Gamma = G @ M
    Phi = I3 - Gamma
    A_bar = Phi @ A
    Q_bar = Phi @ W @ Phi.T + Gamma @ V @ Gamma.T
    P_pred = A_bar @ P @ A_bar.T + Q_bar

    # state estimation
    R_tilde = P_pred + V + Gamma @ V + V @ Gamma.T
    R_tilde = 0.5 * (R_tilde + R_tilde.T) + regularization * I3
    L = (P_pred + V @ Gamma.T).T @ _inverse(R_tilde, "ill-conditioned innovation covariance")
    x_new = x_pred + L @ (y - x_pred)
    Psi = I3 - L
    P_new = (Psi @ P_pred @ Psi.T + L @ V @ L.T
             - Psi @ Gamma @ V @ L.T - L @ V @ Gamma.T @ Psi.T)
    P_new = 0.5 * (P_new + P_new.T)

    return ObserverState(x_new, P_new, delta_hat), delta_hat, x_new


def estimate_input_dd(delta_hat, u_prev, p: ModelParams) -> np.ndarray:
    """Wheel-space estimate of the input actually applied at ``k-1``."""
    return input_transform_inv(np.asarray(u_prev) + np.asarray(delta_hat), p)
