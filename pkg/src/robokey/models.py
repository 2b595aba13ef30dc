"""Discrete-time kinematics of a differential-drive robot.

States are numpy arrays ``[px, py, theta]`` with theta kept unwrapped.
Wheel-space inputs are ``[omega_r, omega_l]`` and unicycle inputs are
``[v, omega]``.  Noise is always passed in explicitly so that one seeded
stream can drive several model forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IDENTITY_OUTPUT = "full-state-identity"


class ConfigurationError(ValueError):
    """Raised for invalid model parameters or unsupported options."""


def _as_psd(name: str, m, size: int | None = None) -> np.ndarray:
    m = np.array(m, dtype=float)
    if m.ndim == 0:
        if size is None:
            raise ConfigurationError(f"{name}: scalar needs an explicit size")
        m = float(m) * np.eye(size)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigurationError(f"{name} must be a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ConfigurationError(f"{name} has non-finite entries")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ConfigurationError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(m).min() < -1e-12:
        raise ConfigurationError(f"{name} is not positive semidefinite")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class ModelParams:
    """Model knowledge: sampling time, geometry, noise covariances, output map.

    ``W`` and ``V`` accept either a matrix or a scalar multiple of identity.
    """

    T: float = 0.2
    r: float = 0.021
    D: float = 0.1047
    W: np.ndarray = field(default_factory=lambda: 1e-2 * np.eye(3))
    V: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(3))
    output_map: str = IDENTITY_OUTPUT
    omega_max: float = 38.0

    def __post_init__(self):
        for name in ("T", "r", "D", "omega_max"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be strictly positive, got {value!r}")
        if self.output_map != IDENTITY_OUTPUT:
            raise ConfigurationError(f"unsupported output map {self.output_map!r}")
        object.__setattr__(self, "W", _as_psd("W", self.W, 3))
        object.__setattr__(self, "V", _as_psd("V", self.V, self.n_p))
        if self.W.shape != (3, 3):
            raise ConfigurationError("W must be 3x3")

    @property
    def n_p(self) -> int:
        return 3

    @property
    def H(self) -> np.ndarray:
        r, D = self.r, self.D
        return np.array([[r / 2, r / 2], [r / D, -r / D]])

    @property
    def H_inv(self) -> np.ndarray:
        r, D = self.r, self.D
        return np.array([[1 / r, D / (2 * r)], [1 / r, -D / (2 * r)]])

    def replace(self, **changes) -> "ModelParams":
        values = dict(T=self.T, r=self.r, D=self.D, W=self.W, V=self.V,
                      output_map=self.output_map, omega_max=self.omega_max)
        values.update(changes)
        return ModelParams(**values)

    def same_as(self, other: "ModelParams") -> bool:
        return (self.T == other.T and self.r == other.r and self.D == other.D
                and np.array_equal(self.W, other.W) and np.array_equal(self.V, other.V)
                and self.output_map == other.output_map
                and self.omega_max == other.omega_max)


@dataclass(frozen=True)
class NoiseDraw:
    """One step of process noise ``zeta`` (3,) and measurement noise ``xi`` (n_p,)."""

    zeta: np.ndarray
    xi: np.ndarray

    @classmethod
    def zero(cls, n_p: int = 3) -> "NoiseDraw":
        return cls(np.zeros(3), np.zeros(n_p))


ZERO_NOISE = NoiseDraw.zero()


def wrap_angle(theta):
    """Map angles to (-pi, pi]; for display only."""
    wrapped = np.mod(np.asarray(theta) + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def _check_state(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (3,):
        raise ValueError(f"state must have shape (3,), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite robot state {x}")
    return x


def input_transform(u_d, p: ModelParams) -> np.ndarray:
    """Wheel speeds ``[omega_r, omega_l]`` -> unicycle ``[v, omega]``."""
    w_r, w_l = u_d
    return np.array([p.r / 2 * (w_r + w_l), p.r / p.D * (w_r - w_l)])


def input_transform_inv(u_u, p: ModelParams) -> np.ndarray:
    """Unicycle ``[v, omega]`` -> wheel speeds ``[omega_r, omega_l]``."""
    v, w = u_u
    half = p.D / (2 * p.r) * w
    return np.array([v / p.r + half, v / p.r - half])


def saturate(u_d, p: ModelParams) -> np.ndarray:
    return np.clip(np.asarray(u_d, dtype=float), -p.omega_max, p.omega_max)


def diff_drive_step(x, u_d, p: ModelParams, n: NoiseDraw = ZERO_NOISE) -> np.ndarray:
    px, py, th = _check_state(x)
    w_r, w_l = u_d
    s = p.T * p.r / 2 * (w_r + w_l)
    return np.array([
        px + s * np.cos(th) + n.zeta[0],
        py + s * np.sin(th) + n.zeta[1],
        th + p.T * p.r / p.D * (w_r - w_l) + n.zeta[2],
    ])


def unicycle_step(x, u_u, p: ModelParams, n: NoiseDraw = ZERO_NOISE) -> np.ndarray:
    px, py, th = _check_state(x)
    v, w = u_u
    return np.array([
        px + p.T * v * np.cos(th) + n.zeta[0],
        py + p.T * v * np.sin(th) + n.zeta[1],
        th + p.T * w + n.zeta[2],
    ])


def measure(x, p: ModelParams, n: NoiseDraw = ZERO_NOISE) -> np.ndarray:
    if p.output_map != IDENTITY_OUTPUT:
        raise ConfigurationError(f"unsupported output map {p.output_map!r}")
    return _check_state(x) + n.xi


class NoiseStream:
    """Seeded Gaussian noise source producing :class:`NoiseDraw` values.

    Process and measurement noise come from separate generators so that
    changing one covariance does not reshuffle the other stream.
    """

    def __init__(self, W, V, process_seed: int, measurement_seed: int):
        self.W = _as_psd("W_sim", W, 3)
        self.V = _as_psd("V_sim", V, 3)
        self._zeta_chol = _psd_factor(self.W)
        self._xi_chol = _psd_factor(self.V)
        self._process = np.random.default_rng(process_seed)
        self._measurement = np.random.default_rng(measurement_seed)

    def draw(self) -> NoiseDraw:
        zeta = self._zeta_chol @ self._process.standard_normal(3)
        xi = self._xi_chol @ self._measurement.standard_normal(self.V.shape[0])
        return NoiseDraw(zeta, xi)


def _psd_factor(m: np.ndarray) -> np.ndarray:
    # eigh tolerates singular (e.g. zero) covariances where cholesky would fail
    vals, vecs = np.linalg.eigh(m)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))
