"""Session configuration, key material and shared helpers for the parties."""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from ..bounds import key_headroom, key_ok
from ..fixedpoint import FixedConfig
from ..paillier import (Ciphertext, PaillierPublicKey, PaillierSecretKey, deserialize_many,
                        keygen, serialize_many)
from .transcript import BlindLog


class KeySizeError(ValueError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    cfg: FixedConfig
    K_c: int
    K_w: int | None = None
    cold_start: bool = True
    lam: int = 40
    audit: bool = False
    enforce_keysize: bool = True

    def __post_init__(self):
        if self.lam < 40:
            raise ValueError("statistical security parameter must be at least 40 bits")
        if self.K_c < 1 or (self.K_w is not None and self.K_w < 1):
            raise ValueError("iteration counts must be positive")

    @property
    def K(self) -> int:
        if self.cold_start or self.K_w is None:
            return self.K_c
        return self.K_w

    @property
    def l(self) -> int:
        """Bit width of scale-1 values once shifted to be non-negative."""
        return self.cfg.l_i + self.cfg.l_f + 1

    def check_key(self, pk: PaillierPublicKey, variant: str):
        if self.enforce_keysize and not key_ok(pk.n, self.cfg.l_i, self.cfg.l_f, self.lam, variant):
            need = key_headroom(self.cfg.l_i, self.cfg.l_f, self.lam, variant)
            raise KeySizeError(f"{pk.bit_length}-bit modulus too small: need log2(n/3) > {need}")

    def to_json(self) -> dict:
        return {"l_i": self.cfg.l_i, "l_f": self.cfg.l_f, "K_c": self.K_c, "K_w": self.K_w,
                "cold_start": self.cold_start, "lambda": self.lam}

    @classmethod
    def from_json(cls, data: dict) -> "SessionConfig":
        return cls(FixedConfig(int(data["l_i"]), int(data["l_f"])), int(data["K_c"]),
                   data.get("K_w"), bool(data.get("cold_start", True)), int(data.get("lambda", 40)))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass
class TwoServerKeys:
    pk1: PaillierPublicKey
    sk1: PaillierSecretKey      # held by the support server
    pk2: PaillierPublicKey
    sk2: PaillierSecretKey      # held by the client

    @classmethod
    def generate(cls, bits: int, rng=None) -> "TwoServerKeys":
        pk1, sk1 = keygen(bits, rng)
        pk2, sk2 = keygen(bits, rng)
        return cls(pk1, sk1, pk2, sk2)


def party_rng(seed, role: str) -> random.Random:
    return random.Random(f"{seed}:{role}")


def pack(cts) -> bytes:
    return serialize_many(cts)


def unpack(payload: bytes, pk: PaillierPublicKey) -> list[Ciphertext]:
    return deserialize_many(payload, pk)


class BlindSource:
    """Draws additive blinds uniformly from ``(0, 2**bits)`` and logs them."""

    def __init__(self, rng, log: BlindLog | None = None):
        self.rng = rng
        self.log = log if log is not None else BlindLog()

    def draw(self, purpose: str, bits: int, data_bits: int) -> int:
        v = self.rng.randrange(1, 1 << bits)
        self.log.add(purpose, v, bits, data_bits)
        return v


@dataclass
class PartyState:
    """What a role keeps between sessions (encrypted warm-start iterate)."""
    U_w: list[Ciphertext] | None = None
    extra: dict = field(default_factory=dict)
