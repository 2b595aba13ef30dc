"""Flat experiment configuration, seed derivation and ``key=value`` I/O."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields

import numpy as np

from .adversary import PERTURBABLE, AdversaryConfig
from .control import ControllerGains, ControllerState, SquareTrajectory
from .ecc import EccConfig
from .models import ModelParams
from .protocol import DEFAULT_DIGEST, BiasConfig

STOP_MODES = ("key", "accepted")


def derive_seeds(master: int, point: int = 0, run: int = 0) -> tuple[int, int, int, int]:
    """Child seeds ``(key, process, measurement, adversary)``.

    Mixing is numpy's ``SeedSequence`` over the entropy words
    ``[master, point, run]``.
    """
    words = np.random.SeedSequence([master, point, run]).generate_state(4, dtype=np.uint32)
    return tuple(int(w) for w in words)


@dataclass(frozen=True)
class ExperimentConfig:
    # robot model as known to the controller
    T: float = 0.2
    r: float = 0.021
    D: float = 0.1047
    W: float = 1e-2
    V: float = 1e-4
    omega_max: float = 38.0
    saturate: bool = True
    # noise actually injected by the simulator
    noise_w: float = 1e-5
    noise_v: float = 1e-6
    # tracking
    kp: float = 1.10
    kd: float = 0.80
    xi_min: float = 0.01
    xi0: float = 0.01
    side_time: float = 17.0
    laps: int = 3
    # protocol
    delta_v: float = 0.035
    delta_omega: float = 0.0
    ecc_rep: int = 3
    accept_threshold: int = 0
    key_bits: int = 345
    stop: str = "key"
    max_steps: int = 100_000
    digest: str = DEFAULT_DIGEST
    # adversary
    alpha: float = 0.0
    perturb_targets: str = ",".join(PERTURBABLE)
    # seeds; explicit child seeds override the ones derived from ``seed``
    seed: int = 0
    key_seed: int | None = None
    process_seed: int | None = None
    measurement_seed: int | None = None
    adversary_seed: int | None = None

    def __post_init__(self):
        if self.key_bits <= 0 or self.laps <= 0:
            raise ValueError("key_bits and laps must be positive")
        if self.stop not in STOP_MODES:
            raise ValueError(f"stop must be one of {STOP_MODES}")
        if self.noise_w < 0 or self.noise_v < 0:
            raise ValueError("simulation noise levels must be non-negative")
        # builds every sub-config once so invalid values fail early
        self.params, self.gains, self.ecc, self.adversary
        if self.protocol_on:
            self.bias

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def seeds(self) -> tuple[int, int, int, int]:
        derived = derive_seeds(self.seed)
        explicit = (self.key_seed, self.process_seed, self.measurement_seed, self.adversary_seed)
        return tuple(d if e is None else e for d, e in zip(derived, explicit))

    def with_derived_seeds(self, point: int, run: int, common: bool = True) -> "ExperimentConfig":
        """Child seeds for one sweep cell.

        With ``common`` every point of a sweep reuses the seeds of its run
        index (common random numbers), so points differ only in the swept
        parameter.
        """
        k, p, m, a = derive_seeds(self.seed, 0 if common else point, run)
        return self.replace(key_seed=k, process_seed=p, measurement_seed=m, adversary_seed=a)

    @property
    def params(self) -> ModelParams:
        return ModelParams(T=self.T, r=self.r, D=self.D, W=self.W * np.eye(3),
                           V=self.V * np.eye(3), omega_max=self.omega_max)

    @property
    def gains(self) -> ControllerGains:
        return ControllerGains(self.kp, self.kp, self.kd, self.kd, self.xi_min)

    @property
    def controller_state(self) -> ControllerState:
        return ControllerState(self.xi0)

    @property
    def trajectory(self) -> SquareTrajectory:
        return SquareTrajectory(side_time=self.side_time, laps=self.laps)

    @property
    def protocol_on(self) -> bool:
        return self.delta_v + self.delta_omega > 0

    @property
    def bias(self) -> BiasConfig:
        return BiasConfig(self.delta_v, self.delta_omega)

    @property
    def ecc(self) -> EccConfig:
        return EccConfig.repetition(self.ecc_rep, self.accept_threshold)

    @property
    def adversary(self) -> AdversaryConfig:
        targets = tuple(t for t in self.perturb_targets.split(",") if t)
        return AdversaryConfig(self.alpha, targets, self.seeds[3])

    @property
    def key_steps(self) -> int | None:
        """Number of bit-carrying steps, ``None`` when running to a target length."""
        if self.stop == "accepted":
            return None
        codewords = -(-self.key_bits // self.ecc.k_c)
        return codewords * self.ecc.n_c

    def to_flat(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, float):
                value = "%.17g" % value
            out[f.name] = str(value)
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, str]) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for raw_key, text in flat.items():
            key = raw_key.strip().replace("-", "_")
            if key not in types:
                raise KeyError(f"unknown configuration key {raw_key!r}")
            values[key] = _parse(types[key], text.strip())
        return cls(**values)

    def canonical(self) -> dict[str, str]:
        """``to_flat`` with the resolved child seeds filled in."""
        flat = self.to_flat()
        flat.update(zip(("key_seed", "process_seed", "measurement_seed", "adversary_seed"),
                        map(str, self.seeds)))
        return flat

    def digest_hex(self) -> str:
        text = "".join(f"{k}={v}\n" for k, v in self.canonical().items())
        return hashlib.sha256(text.encode("ascii")).hexdigest()

    def header(self) -> dict[str, str]:
        return {**self.canonical(), "config_digest": self.digest_hex()}

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "ExperimentConfig":
        """Rebuild the configuration recorded in a transcript header."""
        flat = {k: v for k, v in header.items() if k != "config_digest"}
        cfg = cls.from_flat(flat)
        recorded = header.get("config_digest")
        if recorded is not None and recorded != cfg.digest_hex():
            raise ValueError("transcript header does not match its config digest")
        return cfg


def _parse(type_name: str, text: str):
    if type_name == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if type_name == "float":
        return float(text)
    if type_name in ("int", "int | None"):
        return int(text)
    return text


def read_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    flat = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            flat[key.strip().replace("-", "_")] = value.strip()
    return flat
