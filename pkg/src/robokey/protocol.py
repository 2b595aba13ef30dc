"""Key agreement: bit selection on the robot, bit estimation on the controller.

Bit ``0`` selects the ``+bias`` input ``u0`` and bit ``1`` the ``-bias``
input ``u1`` on both sides.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .ecc import EccConfig, ecc_decode, ecc_encode
from .messages import Ack, ControlMessage
from .models import ModelParams, input_transform, input_transform_inv
from .uio import ObserverState, estimate_input_dd, uio_step

PerturbedInputPair = ControlMessage

DEFAULT_DIGEST = "sha256"


class ProtocolError(RuntimeError):
    """Desynchronization or misuse of a protocol session."""


class SessionComplete(Exception):
    """The robot has no more key material to transmit."""


@dataclass(frozen=True)
class BiasConfig:
    delta_v: float = 0.035
    delta_omega: float = 0.0

    def __post_init__(self):
        if self.delta_v < 0 or self.delta_omega < 0:
            raise ValueError("bias components must be non-negative")
        if self.delta_v + self.delta_omega <= 0:
            raise ValueError("at least one bias component must be strictly positive")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.delta_v, self.delta_omega])


def perturb_inputs(u, b: BiasConfig, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    return input_transform_inv(u + b.vector, p), input_transform_inv(u - b.vector, p)


def controller_estimate_bit(u_hat, pair: ControlMessage) -> tuple[int, bool]:
    """Nearest-input bit decision; returns ``(bit, tie)``.  Ties decode to 0."""
    u_hat = np.asarray(u_hat, dtype=float)
    d0 = np.linalg.norm(u_hat - np.asarray(pair.u0))
    d1 = np.linalg.norm(u_hat - np.asarray(pair.u1))
    if d1 < d0:
        return 1, False
    return 0, bool(d0 == d1)


class BitEstimate(NamedTuple):
    obs: ObserverState
    bit: int
    tie: bool
    delta_hat: np.ndarray
    x_hat: np.ndarray


def nominal_from_pair(pair: ControlMessage, p: ModelParams) -> np.ndarray:
    """Unicycle input at the midpoint of the transmitted wheel-speed pair."""
    mid = 0.5 * (np.asarray(pair.u0) + np.asarray(pair.u1))
    return input_transform(mid, p)


def estimate_bit(obs: ObserverState, pair_prev: ControlMessage, y, p: ModelParams) -> BitEstimate:
    """Run the observer on ``y(k)`` and decide the bit used at ``k-1``.

    Only public quantities are used (the transmitted pair and the
    measurement), so the controller and an eavesdropper holding the same
    model compute exactly the same thing.
    """
    u_prev = nominal_from_pair(pair_prev, p)
    obs, delta_hat, x_hat = uio_step(obs, u_prev, y, p)
    u_hat = estimate_input_dd(delta_hat, u_prev, p)
    bit, tie = controller_estimate_bit(u_hat, pair_prev)
    return BitEstimate(obs, bit, tie, delta_hat, x_hat)


@dataclass
class RobotSession:
    """Robot side: walks codeword bits and keeps acked substrings.

    ``key_source`` is the full source key for a fixed-length session.  With
    ``draw_bits`` set instead, substrings are drawn on demand and the
    session ends once ``target`` accepted bits are held.
    """

    ecc: EccConfig
    key_source: str = ""
    draw_bits: Callable[[int], str] | None = None
    target: int | None = None
    key_out: str = ""
    current_codeword: str = ""
    current_substring: str = ""
    bit_cursor: int = 0
    codeword_seq: int = 0
    pending: "OrderedDict[int, str]" = field(default_factory=OrderedDict)
    _offset: int = 0

    def __post_init__(self):
        if self.draw_bits is None and len(self.key_source) % self.ecc.k_c:
            raise ValueError("source key length must be a multiple of k_c")
        if self.draw_bits is not None and self.target is None:
            raise ValueError("on-demand key source needs a target length")

    def _load_next(self) -> bool:
        k = self.ecc.k_c
        if self.draw_bits is not None:
            if len(self.key_out) >= self.target:
                return False
            self.key_source += self.draw_bits(k)
        if self._offset + k > len(self.key_source):
            return False
        self.current_substring = self.key_source[self._offset:self._offset + k]
        self._offset += k
        self.current_codeword = ecc_encode(self.current_substring, self.ecc)
        self.bit_cursor = 0
        return True

    @property
    def transmitting(self) -> bool:
        return 0 < len(self.current_codeword) and self.bit_cursor < len(self.current_codeword)

    @property
    def exhausted(self) -> bool:
        """No codeword in flight and nothing left to send."""
        if self.transmitting:
            return False
        if self.draw_bits is not None:
            return len(self.key_out) >= self.target
        return self._offset >= len(self.key_source)

    @property
    def complete(self) -> bool:
        if self.draw_bits is not None:
            return len(self.key_out) >= self.target
        return self.exhausted and not self.pending


def robot_next_input(sess: RobotSession, pair: ControlMessage) -> tuple[np.ndarray, int]:
    if not sess.transmitting and not sess._load_next():
        raise SessionComplete("key source exhausted")
    bit = int(sess.current_codeword[sess.bit_cursor])
    sess.bit_cursor += 1
    if sess.bit_cursor == sess.ecc.n_c:
        sess.pending[sess.codeword_seq] = sess.current_substring
        sess.codeword_seq += 1
        sess.current_codeword = ""
    return np.asarray(pair.u1 if bit else pair.u0, dtype=float), bit


def robot_handle_ack(sess: RobotSession, ack: Ack) -> RobotSession:
    if ack.seq not in sess.pending:
        raise ProtocolError(f"ack for unknown codeword {ack.seq}; pending={list(sess.pending)}")
    substring = sess.pending.pop(ack.seq)
    if ack.accepted:
        if sess.target is not None:
            substring = substring[: max(0, sess.target - len(sess.key_out))]
        sess.key_out += substring
    return sess


@dataclass
class ControllerSession:
    ecc: EccConfig
    key_out: str = ""
    current_codeword: str = ""
    tie_seen: bool = False
    codeword_seq: int = 0
    accepted: int = 0
    rejected: int = 0


def controller_codeword_step(sess: ControllerSession, b_hat: int, cfg: EccConfig | None = None,
                             tie: bool = False) -> Ack | None:
    """Append one estimated bit; emit an ack once the codeword is full.

    A codeword containing a tied bit decision is always rejected.
    """
    cfg = cfg or sess.ecc
    sess.current_codeword += str(int(b_hat))
    sess.tie_seen |= tie
    if len(sess.current_codeword) < cfg.n_c:
        return None
    s_hat, dist = ecc_decode(sess.current_codeword, cfg)
    ok = dist <= cfg.accept_threshold and not sess.tie_seen
    if ok:
        sess.key_out += s_hat
        sess.accepted += 1
    else:
        sess.rejected += 1
    ack = Ack(ok, sess.codeword_seq)
    sess.codeword_seq += 1
    sess.current_codeword = ""
    sess.tie_seen = False
    return ack


@dataclass(frozen=True)
class KeyMaterial:
    bits: str
    digest: bytes

    @classmethod
    def from_bits(cls, bits: str, algorithm: str = DEFAULT_DIGEST) -> "KeyMaterial":
        return cls(bits, hashlib.new(algorithm, bits.encode("ascii")).digest())


def verify_keys(a: KeyMaterial, b: KeyMaterial) -> bool:
    return a.digest == b.digest
