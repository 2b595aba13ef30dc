"""Passive eavesdropper holding an imperfect copy of the robot model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ecc import EccConfig, ecc_decode, hamming
from .messages import ControlMessage, MeasurementMessage
from .models import ModelParams
from .protocol import estimate_bit
from .uio import ObserverState

PERTURBABLE = ("r", "D", "W", "V")


@dataclass(frozen=True)
class AdversaryConfig:
    alpha: float = 0.0
    perturb_targets: tuple[str, ...] = PERTURBABLE
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        unknown = set(self.perturb_targets) - set(PERTURBABLE)
        if unknown:
            raise ValueError(f"cannot perturb {sorted(unknown)}")
        if self.alpha > 0 and not self.perturb_targets:
            raise ValueError("perturb_targets must be non-empty when alpha > 0")


@dataclass(frozen=True)
class AdversaryModel:
    params_a: ModelParams
    errors: dict = field(default_factory=dict)


def relative_errors(cfg: AdversaryConfig) -> dict[str, float]:
    """Unit draws in [-1, 1] per perturbable parameter, scaled by ``alpha``.

    All four draws are taken regardless of ``perturb_targets`` so the
    error on one parameter does not depend on which others are perturbed.
    """
    rng = np.random.default_rng(cfg.seed)
    units = rng.uniform(-1.0, 1.0, size=len(PERTURBABLE))
    return {name: cfg.alpha * float(u) for name, u in zip(PERTURBABLE, units)
            if name in cfg.perturb_targets}


def sample_adversary_model(p_true: ModelParams, cfg: AdversaryConfig) -> AdversaryModel:
    if cfg.alpha == 0:
        return AdversaryModel(p_true, {})
    errors = relative_errors(cfg)
    # alpha < 1 keeps every scaled quantity positive, so no resampling is needed
    changes = {name: (1 + eps) * getattr(p_true, name) for name, eps in errors.items()}
    return AdversaryModel(p_true.replace(**changes), errors)


def eve_decode_step(eve_obs: ObserverState, observed_pair_prev: ControlMessage,
                    observed_y, m: AdversaryModel) -> tuple[ObserverState, int]:
    est = estimate_bit(eve_obs, observed_pair_prev, observed_y, m.params_a)
    return est.obs, est.bit


class Eavesdropper:
    """Consumes the public record stream and rebuilds a key guess.

    Codeword ``i`` occupies the transmission steps ``i*n_c .. i*n_c+n_c-1``;
    ``key_steps`` bounds the number of steps that carry key bits (``None``
    for an unbounded session).
    """

    def __init__(self, model: AdversaryModel, ecc: EccConfig, key_steps: int | None,
                 obs: ObserverState | None = None, protocol_on: bool = True):
        self.model = model
        self.ecc = ecc
        self.key_steps = key_steps
        self.protocol_on = protocol_on
        self.obs = obs if obs is not None else ObserverState()
        self.bits: dict[int, int] = {}
        self.acks: dict[int, bool] = {}
        self._last_pair: ControlMessage | None = None

    def __call__(self, msg) -> None:
        if isinstance(msg, ControlMessage):
            if msg.ack is not None:
                self.acks[msg.ack.seq] = msg.ack.accepted
            self._last_pair = msg
        elif isinstance(msg, MeasurementMessage):
            pair = self._last_pair
            if pair is None or pair.step != msg.step - 1:
                raise ValueError(f"measurement {msg.step} without preceding control record")
            self.obs, bit = eve_decode_step(self.obs, pair, np.asarray(msg.y), self.model)
            k = msg.step - 1
            if self.protocol_on and (self.key_steps is None or k < self.key_steps):
                self.bits[k] = bit

    def key(self) -> str:
        return eve_assemble_key(self.bits, self.acks, self.ecc)


def eve_assemble_key(bits: dict[int, int], observed_acks: dict[int, bool], ecc: EccConfig) -> str:
    """Decode every codeword the controller accepted, in sequence order."""
    out = []
    for seq in sorted(observed_acks):
        if not observed_acks[seq]:
            continue
        steps = range(seq * ecc.n_c, (seq + 1) * ecc.n_c)
        word = "".join(str(bits[k]) for k in steps)
        out.append(ecc_decode(word, ecc)[0])
    return "".join(out)


def disagreement(k_c: str, k_a: str) -> float:
    """Percentage of differing bits; NaN for an empty controller key."""
    if len(k_c) != len(k_a):
        raise ValueError("keys must have equal length")
    if not k_c:
        return float("nan")
    return 100.0 * hamming(k_c, k_a) / len(k_c)
