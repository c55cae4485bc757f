"""Additively homomorphic Paillier cryptosystem.

Keys and ciphertexts are immutable values.  All big-integer work goes
through gmpy2; values handed back to callers are plain Python ints.

The generator is fixed to ``g = n + 1`` so that ``g**m mod n**2`` collapses
to ``1 + m*n``.  Decryption runs over the CRT split ``p**2, q**2`` and is
checked against the textbook formula in the test suite.
"""
from __future__ import annotations

import hashlib
import json
import math
import secrets
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import gmpy2

MR_ROUNDS = 64
MIN_PRODUCTION_BITS = 512
_MAX_PRIME_TRIES = 100_000


class RandomSource(Protocol):
    def randrange(self, start: int, stop: int | None = ..., step: int = ...) -> int: ...

    def getrandbits(self, k: int) -> int: ...


class PaillierError(Exception):
    pass


class KeyMismatchError(PaillierError):
    pass


class DeserializationError(PaillierError):
    pass


def default_rng() -> RandomSource:
    return secrets.SystemRandom()


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    g: int
    n_sq: int = field(repr=False, compare=False)
    bit_length: int = field(compare=False)

    @classmethod
    def from_modulus(cls, n: int) -> "PaillierPublicKey":
        n = int(n)
        return cls(n=n, g=n + 1, n_sq=n * n, bit_length=n.bit_length())

    @property
    def key_id(self) -> str:
        return hashlib.sha256(f"{self.n:x}".encode()).hexdigest()[:16]

    @property
    def ciphertext_bytes(self) -> int:
        return 2 * ((self.bit_length + 7) // 8)

    def random_unit(self, rng: RandomSource) -> int:
        """Uniform element of Z_n^*."""
        while True:
            r = rng.randrange(1, self.n)
            if math.gcd(r, self.n) == 1:
                return r

    def raw_encrypt(self, m: int, r: int) -> int:
        # g^m = (1 + n)^m = 1 + m*n  (mod n^2)
        return int((1 + m * self.n) * gmpy2.powmod(r, self.n, self.n_sq) % self.n_sq)

    def encrypt(self, m: int, rng: RandomSource | None = None, r: int | None = None) -> "Ciphertext":
        """Encrypt ``m`` in ``[0, n)``; pass ``r`` to fix the randomness."""
        if not 0 <= m < self.n:
            raise ValueError(f"plaintext out of range [0, n): {m}")
        if r is None:
            r = self.random_unit(rng or default_rng())
        return Ciphertext(self.raw_encrypt(m, r), self)

    def encrypt_signed(self, v: int, rng: RandomSource | None = None) -> "Ciphertext":
        """Encrypt a signed integer through its residue ``v mod n``."""
        return self.encrypt(v % self.n, rng)

    def encrypt_zero(self, rng: RandomSource | None = None) -> "Ciphertext":
        return self.encrypt(0, rng)

    def trivial(self, m: int) -> "Ciphertext":
        """Deterministic encryption with r = 1; only for public constants."""
        return Ciphertext((1 + (m % self.n) * self.n) % self.n_sq, self)

    def to_json(self) -> dict:
        return {"n": hex(self.n), "g": hex(self.g)}

    @classmethod
    def from_json(cls, data: dict) -> "PaillierPublicKey":
        pk = cls.from_modulus(int(data["n"], 16))
        if "g" in data and int(data["g"], 16) != pk.g:
            raise PaillierError("only g = n + 1 is supported")
        return pk


@dataclass(frozen=True)
class PaillierSecretKey:
    p: int
    q: int
    public_key: PaillierPublicKey = field(repr=False)
    gamma: int = field(init=False, repr=False)
    delta: int = field(init=False, repr=False)

    def __post_init__(self):
        p, q = self.p, self.q
        n, n_sq = self.public_key.n, self.public_key.n_sq
        if p == q or p * q != n:
            raise PaillierError("p and q must be distinct factors of n")
        gamma = (p - 1) * (q - 1) // math.gcd(p - 1, q - 1)
        u = int(gmpy2.powmod(self.public_key.g, gamma, n_sq))
        delta = int(gmpy2.invert((u - 1) // n, n))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "delta", delta)
        # CRT decryption constants
        object.__setattr__(self, "_p_sq", p * p)
        object.__setattr__(self, "_q_sq", q * q)
        object.__setattr__(self, "_hp", self._h(p))
        object.__setattr__(self, "_hq", self._h(q))
        object.__setattr__(self, "_q_inv_p", int(gmpy2.invert(q, p)))

    def _h(self, prime: int) -> int:
        prime_sq = prime * prime
        lp = (int(gmpy2.powmod(self.public_key.g, prime - 1, prime_sq)) - 1) // prime
        return int(gmpy2.invert(lp, prime))

    @property
    def key_id(self) -> str:
        return self.public_key.key_id

    def decrypt(self, c: "Ciphertext") -> int:
        if c.public_key.n != self.public_key.n:
            raise KeyMismatchError(f"ciphertext key {c.key_id} does not match {self.key_id}")
        p, q = self.p, self.q
        mp = (int(gmpy2.powmod(c.value, p - 1, self._p_sq)) - 1) // p * self._hp % p
        mq = (int(gmpy2.powmod(c.value, q - 1, self._q_sq)) - 1) // q * self._hq % q
        return mq + (mp - mq) * self._q_inv_p % p * q

    def decrypt_textbook(self, c: "Ciphertext") -> int:
        """L(c^gamma mod n^2) * delta mod n, without CRT."""
        if c.public_key.n != self.public_key.n:
            raise KeyMismatchError(f"ciphertext key {c.key_id} does not match {self.key_id}")
        n = self.public_key.n
        u = int(gmpy2.powmod(c.value, self.gamma, self.public_key.n_sq))
        return (u - 1) // n * self.delta % n

    def decrypt_signed(self, c: "Ciphertext") -> int:
        """Decrypt and map residues above n/2 to negatives (no overflow band)."""
        m = self.decrypt(c)
        n = self.public_key.n
        return m - n if m > n // 2 else m

    def to_json(self) -> dict:
        return {"p": hex(self.p), "q": hex(self.q)}

    @classmethod
    def from_json(cls, data: dict) -> "PaillierSecretKey":
        p, q = int(data["p"], 16), int(data["q"], 16)
        return cls(p, q, PaillierPublicKey.from_modulus(p * q))


@dataclass(frozen=True)
class Ciphertext:
    value: int
    public_key: PaillierPublicKey = field(repr=False)

    @property
    def key_id(self) -> str:
        return self.public_key.key_id

    def _check(self, other: "Ciphertext"):
        if other.public_key.n != self.public_key.n:
            raise KeyMismatchError(f"{self.key_id} vs {other.key_id}")

    def __add__(self, other: "Ciphertext | int") -> "Ciphertext":
        if isinstance(other, Ciphertext):
            return add(self, other)
        return add(self, self.public_key.trivial(other))

    __radd__ = __add__

    def __neg__(self) -> "Ciphertext":
        return scalar_mul(-1, self)

    def __sub__(self, other: "Ciphertext | int") -> "Ciphertext":
        if isinstance(other, Ciphertext):
            return add(self, -other)
        return self + (-other)

    def __mul__(self, k: int) -> "Ciphertext":
        return scalar_mul(k, self)

    __rmul__ = __mul__

    def to_bytes(self) -> bytes:
        return serialize(self)


def add(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    c1._check(c2)
    pk = c1.public_key
    return Ciphertext(c1.value * c2.value % pk.n_sq, pk)


def scalar_mul(k: int, c: Ciphertext) -> Ciphertext:
    pk = c.public_key
    k %= pk.n
    if k == 0:
        return pk.trivial(0)
    if k == 1:
        return c
    # exponents near n are negations; invert instead of using a full-size exponent
    if k > pk.n // 2:
        inv = gmpy2.invert(c.value, pk.n_sq)
        return Ciphertext(int(gmpy2.powmod(inv, pk.n - k, pk.n_sq)), pk)
    return Ciphertext(int(gmpy2.powmod(c.value, k, pk.n_sq)), pk)


def rerandomize(pk: PaillierPublicKey, c: Ciphertext, rng: RandomSource | None = None) -> Ciphertext:
    return add(c, pk.encrypt_zero(rng))


def encrypt(pk: PaillierPublicKey, m: int, rng: RandomSource | None = None) -> Ciphertext:
    return pk.encrypt(m, rng)


def decrypt(sk: PaillierSecretKey, c: Ciphertext) -> int:
    return sk.decrypt(c)


def serialize(c: Ciphertext) -> bytes:
    return c.value.to_bytes(c.public_key.ciphertext_bytes, "big")


def deserialize(data: bytes, pk: PaillierPublicKey) -> Ciphertext:
    if len(data) != pk.ciphertext_bytes:
        raise DeserializationError(f"expected {pk.ciphertext_bytes} bytes, got {len(data)}")
    value = int.from_bytes(data, "big")
    if not 0 < value < pk.n_sq:
        raise DeserializationError("ciphertext value out of range")
    return Ciphertext(value, pk)


def serialize_many(cs: Iterable[Ciphertext]) -> bytes:
    return b"".join(serialize(c) for c in cs)


def deserialize_many(data: bytes, pk: PaillierPublicKey) -> list[Ciphertext]:
    width = pk.ciphertext_bytes
    if len(data) % width:
        raise DeserializationError(f"buffer length {len(data)} is not a multiple of {width}")
    return [deserialize(data[i:i + width], pk) for i in range(0, len(data), width)]


def _random_prime(bits: int, rng: RandomSource) -> int:
    for _ in range(_MAX_PRIME_TRIES):
        # top two bits set so that the product of two such primes has 2*bits bits
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if gmpy2.is_prime(cand, MR_ROUNDS):
            return cand
    raise PaillierError(f"no {bits}-bit prime found after {_MAX_PRIME_TRIES} candidates")


def keypair_from_primes(p: int, q: int) -> tuple[PaillierPublicKey, PaillierSecretKey]:
    pk = PaillierPublicKey.from_modulus(p * q)
    return pk, PaillierSecretKey(p, q, pk)


def keygen(bit_length: int, rng: RandomSource | None = None,
           max_retries: int = 64) -> tuple[PaillierPublicKey, PaillierSecretKey]:
    """Generate a keypair whose modulus has exactly ``bit_length`` bits."""
    if bit_length < 32 or bit_length % 2:
        raise ValueError("bit_length must be even and at least 32")
    rng = rng or default_rng()
    half = bit_length // 2
    for _ in range(max_retries):
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q or math.gcd(p * q, (p - 1) * (q - 1)) != 1:
            continue
        pk, sk = keypair_from_primes(p, q)
        if pk.bit_length == bit_length:
            return pk, sk
    raise PaillierError(f"failed to generate a {bit_length}-bit key in {max_retries} attempts")


def require_production_key(pk: PaillierPublicKey):
    if pk.bit_length < MIN_PRODUCTION_BITS:
        raise PaillierError(f"{pk.bit_length}-bit key below the {MIN_PRODUCTION_BITS}-bit production floor")


def save_keypair(path, pk: PaillierPublicKey, sk: PaillierSecretKey | None = None):
    data = {"public": pk.to_json()}
    if sk is not None:
        data["secret"] = sk.to_json()
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)


def load_keypair(path) -> tuple[PaillierPublicKey, PaillierSecretKey | None]:
    with open(path) as fh:
        data = json.load(fh)
    pk = PaillierPublicKey.from_json(data["public"])
    sk = PaillierSecretKey.from_json(data["secret"]) if "secret" in data else None
    if sk is not None and sk.public_key.n != pk.n:
        raise KeyMismatchError("secret key does not match public key")
    return pk, sk
