"""The networked controller and the robot as message-driven state machines."""

from __future__ import annotations

import numpy as np

from .config import ExperimentConfig
from .control import tracking_control
from .messages import ControlMessage, MeasurementMessage
from .models import NoiseStream, diff_drive_step, input_transform_inv, measure, saturate
from .protocol import (ControllerSession, ProtocolError, RobotSession, controller_codeword_step,
                       estimate_bit, perturb_inputs, robot_handle_ack, robot_next_input)
from .uio import ObserverState


def _pair(u0, u1) -> tuple[tuple[float, float], tuple[float, float]]:
    return (float(u0[0]), float(u0[1])), (float(u1[0]), float(u1[1]))


class Controller:
    """Tracking controller + observer + bit decoder.

    Keeps per-step logs of the bias estimates and decoded bits; these are
    diagnostics only and never sent anywhere.
    """

    def __init__(self, cfg: ExperimentConfig, obs: ObserverState | None = None):
        self.cfg = cfg
        self.params = cfg.params
        self.gains = cfg.gains
        self.trajectory = cfg.trajectory
        self.key_steps = cfg.key_steps
        self.session = ControllerSession(cfg.ecc)
        self.obs = obs if obs is not None else ObserverState()
        self.cs = cfg.controller_state
        self.k = 0
        self.last: ControlMessage | None = None
        self.delta_hat: list[np.ndarray] = []
        self.bits: list[int] = []
        self.ties: list[bool] = []
        self.x_hat: list[np.ndarray] = [self.obs.x_hat]

    def _command(self, ack) -> ControlMessage:
        ref = self.trajectory(self.k * self.params.T)
        u, self.cs = tracking_control(self.cs, self.obs.x_hat, ref, self.gains, self.params)
        if self.cfg.protocol_on:
            u0, u1 = perturb_inputs(u, self.cfg.bias, self.params)
        else:
            u0 = u1 = input_transform_inv(u, self.params)
        self.last = ControlMessage(self.k, *_pair(u0, u1), ack)
        return self.last

    def start(self) -> ControlMessage:
        return self._command(None)

    def on_measurement(self, msg: MeasurementMessage) -> ControlMessage:
        if msg.step != self.k + 1:
            raise ProtocolError(f"controller expected measurement {self.k + 1}, got {msg.step}")
        est = estimate_bit(self.obs, self.last, np.asarray(msg.y), self.params)
        self.obs = est.obs
        self.delta_hat.append(est.delta_hat)
        self.bits.append(est.bit)
        self.ties.append(est.tie)
        self.x_hat.append(est.x_hat)
        ack = None
        if self.cfg.protocol_on and (self.key_steps is None or self.k < self.key_steps):
            ack = controller_codeword_step(self.session, est.bit, tie=est.tie)
        self.k += 1
        return self._command(ack)


class Robot:
    """Robot CPU plus the simulated plant and its sensors.

    ``states`` and ``applied_bits`` form the ground-truth side log.
    """

    def __init__(self, cfg: ExperimentConfig, x0=(0.0, 0.0, 0.0)):
        self.cfg = cfg
        self.params = cfg.params
        key_seed, process_seed, measurement_seed, _ = cfg.seeds
        self.noise = NoiseStream(cfg.noise_w * np.eye(3), cfg.noise_v * np.eye(3),
                                 process_seed, measurement_seed)
        key_rng = np.random.default_rng(key_seed)
        draw = lambda n: "".join(map(str, key_rng.integers(0, 2, size=n)))
        if not cfg.protocol_on:
            self.session = None
            self.step_limit = cfg.key_steps or cfg.max_steps
        elif cfg.stop == "accepted":
            self.session = RobotSession(cfg.ecc, draw_bits=draw, target=cfg.key_bits)
            self.step_limit = cfg.max_steps
        else:
            codewords = -(-cfg.key_bits // cfg.ecc.k_c)
            self.session = RobotSession(cfg.ecc, key_source=draw(codewords * cfg.ecc.k_c))
            self.step_limit = cfg.max_steps
        self.x = np.asarray(x0, dtype=float)
        self.k = 0
        self.states: list[np.ndarray] = [self.x]
        self.applied_bits: list[int | None] = []

    @property
    def key_source(self) -> str:
        return self.session.key_source if self.session else ""

    @property
    def key_out(self) -> str:
        return self.session.key_out if self.session else ""

    def on_control(self, msg: ControlMessage) -> MeasurementMessage | None:
        if msg.step != self.k:
            raise ProtocolError(f"robot expected control {self.k}, got {msg.step}")
        sess = self.session
        if msg.ack is not None:
            if sess is None:
                raise ProtocolError("ack received while the protocol is off")
            robot_handle_ack(sess, msg.ack)
        if (sess is not None and sess.complete) or self.k >= self.step_limit:
            return None
        if sess is not None and not sess.exhausted:
            u, bit = robot_next_input(sess, msg)
        else:
            u, bit = 0.5 * (np.asarray(msg.u0) + np.asarray(msg.u1)), None
        if self.cfg.saturate:
            u = saturate(u, self.params)
        n = self.noise.draw()
        self.x = diff_drive_step(self.x, u, self.params, n)
        y = measure(self.x, self.params, n)
        self.states.append(self.x)
        self.applied_bits.append(bit)
        self.k += 1
        return MeasurementMessage(self.k, tuple(float(v) for v in y))
