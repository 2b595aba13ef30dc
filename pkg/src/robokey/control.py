"""Square reference trajectory and a dynamic feedback linearization tracker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .models import ModelParams

SQUARE = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))


class ReferencePoint(NamedTuple):
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray


@dataclass(frozen=True)
class SquareTrajectory:
    """Closed polygon traversed side by side with cubic timing.

    Every side uses ``s(tau) = 3 tau^2 - 2 tau^3`` so the robot starts and
    stops at each vertex with zero velocity.  After ``laps`` laps the
    reference holds the final vertex.
    """

    vertices: tuple = SQUARE
    side_time: float = 17.0
    laps: int = 3

    @property
    def duration(self) -> float:
        return self.side_time * len(self.vertices) * self.laps

    def __call__(self, t: float) -> ReferencePoint:
        if t < 0:
            raise ValueError("reference time must be non-negative")
        n = len(self.vertices)
        sides = n * self.laps
        side = int(t // self.side_time)
        if side >= sides:
            end = np.array(self.vertices[sides % n], dtype=float)
            return ReferencePoint(end, np.zeros(2), np.zeros(2))
        tau = t / self.side_time - side
        start = np.array(self.vertices[side % n], dtype=float)
        delta = np.array(self.vertices[(side + 1) % n], dtype=float) - start
        Ts = self.side_time
        s = 3 * tau**2 - 2 * tau**3
        ds = (6 * tau - 6 * tau**2) / Ts
        dds = (6 - 12 * tau) / Ts**2
        return ReferencePoint(start + s * delta, ds * delta, dds * delta)


def reference_trajectory(t: float) -> ReferencePoint:
    return SquareTrajectory()(t)


@dataclass(frozen=True)
class ControllerGains:
    kp_x: float = 1.10
    kp_y: float = 1.10
    kd_x: float = 0.80
    kd_y: float = 0.80
    xi_min: float = 0.01

    def __post_init__(self):
        for name in ("kp_x", "kp_y", "kd_x", "kd_y", "xi_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ControllerState:
    xi: float = 0.01  # compensator state = commanded linear speed


def tracking_control(cs: ControllerState, x_hat, ref: ReferencePoint,
                     g: ControllerGains, p: ModelParams):
    """Return ``(np.array([v, omega]), new ControllerState)``."""
    px, py, th = x_hat
    c, s = np.cos(th), np.sin(th)
    xi = cs.xi
    a_x = ref.acc[0] + g.kd_x * (ref.vel[0] - xi * c) + g.kp_x * (ref.pos[0] - px)
    a_y = ref.acc[1] + g.kd_y * (ref.vel[1] - xi * s) + g.kp_y * (ref.pos[1] - py)
    xi_new = xi + p.T * (a_x * c + a_y * s)
    sign = 1.0 if xi >= 0 else -1.0
    if abs(xi_new) < g.xi_min or xi_new * sign < 0:
        xi_new = sign * g.xi_min
    omega = (a_y * c - a_x * s) / xi_new
    return np.array([xi_new, omega]), ControllerState(xi_new)
