"""Values exchanged between the controller and the robot."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple


class Ack(NamedTuple):
    accepted: bool
    seq: int


@dataclass(frozen=True)
class ControlMessage:
    """Perturbed wheel-speed pair for step ``step``, plus an optional ack."""

    step: int
    u0: tuple[float, float]
    u1: tuple[float, float]
    ack: Ack | None = None


@dataclass(frozen=True)
class MeasurementMessage:
    step: int
    y: tuple[float, ...]
