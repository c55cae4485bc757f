"""Fixed-point values: one sign bit, ``l_i`` integer bits, ``l_f`` fractional bits.

A raw integer at scale ``s`` stands for ``raw / 2**(s*l_f)``.  Products of
scale-1 numbers land at higher scales and are brought back with
:func:`truncate` (floor toward minus infinity).

Signed integers map into ``Z_n`` with the upper third of the ring holding
negatives; the middle third is an overflow band and is never decoded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class FixedPointError(Exception):
    pass


class FixedOverflowError(FixedPointError, OverflowError):
    """A value does not fit the integer bits of its configuration."""


class OverflowBandError(FixedPointError, OverflowError):
    """A residue fell into the reserved band ``[n/3, 2n/3]``."""

    def __init__(self, residue: int, n: int, index=None):
        self.residue = residue
        self.n = n
        self.index = index
        where = "" if index is None else f" at index {index}"
        super().__init__(f"residue{where} lies in the overflow band of a {n.bit_length()}-bit modulus")


@dataclass(frozen=True)
class FixedConfig:
    l_i: int
    l_f: int

    def __post_init__(self):
        if self.l_i < 1 or self.l_f < 1:
            raise ValueError("l_i and l_f must both be at least 1")

    @property
    def one(self) -> int:
        return 1 << self.l_f

    def bound(self, scale: int = 1) -> int:
        """Exclusive bound on ``|raw|`` at the given scale."""
        return 1 << (self.l_i + scale * self.l_f)

    def to_json(self) -> dict:
        return {"l_i": self.l_i, "l_f": self.l_f}

    @classmethod
    def from_json(cls, data: dict) -> "FixedConfig":
        return cls(int(data["l_i"]), int(data["l_f"]))


def _round_half_away(f: Fraction) -> int:
    mag = math.floor(abs(f) + Fraction(1, 2))
    return mag if f >= 0 else -mag


def quantize(x: float, l_f: int, mode: str = "nearest") -> int:
    """Raw integer for ``x`` at scale 1.

    ``mode`` is ``nearest`` (ties away from zero), ``floor``, ``ceil`` or
    ``toward_zero``.
    """
    f = Fraction(x) * (1 << l_f)
    if mode == "nearest":
        return _round_half_away(f)
    if mode == "floor":
        return math.floor(f)
    if mode == "ceil":
        return math.ceil(f)
    if mode == "toward_zero":
        return math.trunc(f)
    raise ValueError(f"unknown rounding mode {mode!r}")


def encode(x: float, cfg: FixedConfig) -> int:
    if not abs(x) < (1 << cfg.l_i):
        raise FixedOverflowError(f"|{x}| does not fit {cfg.l_i} integer bits")
    return quantize(x, cfg.l_f)


def decode(raw, cfg: FixedConfig, scale: int = 1):
    """Real value(s) of raw integer(s); arrays come back as float64."""
    div = float(1 << (scale * cfg.l_f))
    if isinstance(raw, np.ndarray):
        return np.array([int(v) / div for v in raw.flat], dtype=float).reshape(raw.shape)
    return int(raw) / div


def decode_exact(raw: int, cfg: FixedConfig, scale: int = 1) -> Fraction:
    return Fraction(int(raw), 1 << (scale * cfg.l_f))


def encode_array(M, cfg: FixedConfig, mode: str = "nearest"):
    """Elementwise encode of a real array.

    Returns the raw integer array (object dtype) and the quantization error
    ``decode(raw) - M`` as float64.
    """
    M = np.asarray(M, dtype=float)
    raw = np.empty(M.shape, dtype=object)
    lim = 1 << cfg.l_i
    for idx, x in np.ndenumerate(M):
        if not abs(x) < lim:
            raise FixedOverflowError(f"element {idx} = {x} does not fit {cfg.l_i} integer bits")
        raw[idx] = quantize(float(x), cfg.l_f, mode)
    return raw, decode(raw, cfg) - M


matrix_encode = encode_array


def check_range(raw, cfg: FixedConfig, scale: int = 1):
    lim = cfg.bound(scale)
    for idx, v in np.ndenumerate(np.asarray(raw, dtype=object)):
        if abs(int(v)) >= lim:
            raise FixedOverflowError(f"raw value at {idx} exceeds {cfg.l_i}+{scale}*{cfg.l_f} bits")


def truncate(raw, l_f: int, scale: int, target: int):
    """Floor-divide raw integer(s) from ``scale`` down to ``target``."""
    if target > scale:
        raise ValueError("truncation target scale above the source scale")
    shift = (scale - target) * l_f
    if isinstance(raw, np.ndarray):
        return np.array([int(v) >> shift for v in raw.flat], dtype=object).reshape(raw.shape)
    return int(raw) >> shift


def to_residue(raw: int, n: int) -> int:
    raw = int(raw)
    if 3 * abs(raw) >= n:
        raise OverflowBandError(raw % n, n)
    return raw % n


def from_residue(r: int, n: int, index=None) -> int:
    r = int(r)
    if not 0 <= r < n:
        raise ValueError("residue outside Z_n")
    if 3 * r < n:
        return r
    if 3 * r > 2 * n:
        return r - n
    raise OverflowBandError(r, n, index)


def in_overflow_band(r: int, n: int) -> bool:
    return n <= 3 * r <= 2 * n


def clamp(raw, lo, hi):
    """Elementwise projection of raw integers onto ``[lo, hi]``."""
    out = np.empty(len(raw), dtype=object)
    for i, v in enumerate(raw):
        out[i] = min(max(int(v), int(lo[i])), int(hi[i]))
    return out


@dataclass(frozen=True)
class FixedVector:
    """Raw integers sharing one configuration and scale."""
    raw: np.ndarray
    cfg: FixedConfig
    scale: int = 1

    def __post_init__(self):
        object.__setattr__(self, "raw", np.asarray(self.raw, dtype=object))
        if self.scale < 1:
            raise ValueError("scale must be positive")
        check_range(self.raw, self.cfg, self.scale)

    @classmethod
    def encode(cls, x, cfg: FixedConfig) -> "FixedVector":
        raw, _ = encode_array(np.atleast_1d(x), cfg)
        return cls(raw, cfg, 1)

    def decode(self) -> np.ndarray:
        return decode(self.raw, self.cfg, self.scale)

    def truncate(self, target: int = 1) -> "FixedVector":
        return FixedVector(truncate(self.raw, self.cfg.l_f, self.scale, target), self.cfg, target)

    def __add__(self, other: "FixedVector") -> "FixedVector":
        if other.scale != self.scale or other.cfg != self.cfg:
            raise FixedPointError(f"cannot add scale {self.scale} to scale {other.scale}")
        return FixedVector(self.raw + other.raw, self.cfg, self.scale)

    def __neg__(self) -> "FixedVector":
        return FixedVector(-self.raw, self.cfg, self.scale)

    def __sub__(self, other: "FixedVector") -> "FixedVector":
        return self + (-other)

    def rmatmul(self, coeff: np.ndarray) -> "FixedVector":
        """``coeff @ self`` for a scale-1 coefficient matrix (or scalar)."""
        coeff = np.asarray(coeff, dtype=object)
        prod = coeff * self.raw if coeff.ndim == 0 else coeff.dot(self.raw)
        return FixedVector(prod, self.cfg, self.scale + 1)

    def residues(self, n: int) -> list[int]:
        return [to_residue(v, n) for v in self.raw]

    @classmethod
    def from_residues(cls, rs, n: int, cfg: FixedConfig, scale: int = 1) -> "FixedVector":
        return cls(np.array([from_residue(r, n, i) for i, r in enumerate(rs)], dtype=object), cfg, scale)

    def __len__(self) -> int:
        return len(self.raw)
