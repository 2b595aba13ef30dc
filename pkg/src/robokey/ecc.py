"""Binary linear block codes with minimum-distance decoding.

Bit strings are ``str`` objects over ``"0"``/``"1"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np


@dataclass(frozen=True)
class EccConfig:
    """Code parameters and the maximum decoding distance still accepted.

    ``generator`` is a ``k_c x n_c`` binary matrix; ``None`` selects the
    repetition code (``k_c = 1``, ``d_c = n_c``).
    """

    n_c: int = 3
    k_c: int = 1
    d_c: int = 3
    accept_threshold: int = 0
    generator: tuple | None = None

    def __post_init__(self):
        if min(self.n_c, self.k_c, self.d_c) < 1:
            raise ValueError("n_c, k_c and d_c must be positive")
        if self.k_c > self.n_c:
            raise ValueError("k_c must not exceed n_c")
        if not 0 <= self.accept_threshold <= (self.d_c - 1) // 2:
            raise ValueError(
                f"accept_threshold must lie in [0, {(self.d_c - 1) // 2}]")
        if self.generator is None:
            if self.k_c != 1 or self.d_c != self.n_c:
                raise ValueError("repetition code needs k_c = 1 and d_c = n_c")
        else:
            g = np.array(self.generator, dtype=np.uint8)
            if g.shape != (self.k_c, self.n_c):
                raise ValueError("generator must be k_c x n_c")

    @classmethod
    def repetition(cls, n_c: int = 3, accept_threshold: int = 0) -> "EccConfig":
        return cls(n_c=n_c, k_c=1, d_c=n_c, accept_threshold=accept_threshold)

    @property
    def is_repetition(self) -> bool:
        return self.generator is None

    def codebook(self) -> dict[str, str]:
        """Map of message -> codeword over all ``2**k_c`` messages."""
        return {"".join(m): ecc_encode("".join(m), self) for m in product("01", repeat=self.k_c)}


def _check_bits(s: str, length: int, what: str):
    if len(s) != length or set(s) - {"0", "1"}:
        raise ValueError(f"{what} must be a {length}-bit string, got {s!r}")


def ecc_encode(s: str, cfg: EccConfig) -> str:
    _check_bits(s, cfg.k_c, "message")
    if cfg.is_repetition:
        return s * cfg.n_c
    msg = np.array([int(b) for b in s], dtype=np.uint8)
    word = msg @ np.array(cfg.generator, dtype=np.uint8) % 2
    return "".join(map(str, word))


def hamming(a: str, b: str) -> int:
    if len(a) != len(b):
        raise ValueError("hamming distance needs equal lengths")
    return sum(x != y for x, y in zip(a, b))


def ecc_decode(c_hat: str, cfg: EccConfig) -> tuple[str, int]:
    """Nearest codeword decoding.

    Returns the decoded message and the distance from ``c_hat`` to the
    code.  For repetition codes this is a majority vote.
    """
    _check_bits(c_hat, cfg.n_c, "received word")
    if cfg.is_repetition:
        ones = c_hat.count("1")
        zeros = cfg.n_c - ones
        return ("1", zeros) if ones > zeros else ("0", ones)
    best = min(cfg.codebook().items(), key=lambda item: (hamming(item[1], c_hat), item[0]))
    return best[0], hamming(best[1], c_hat)
