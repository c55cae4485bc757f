import math
import random

import gmpy2
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from encmpc.paillier import (Ciphertext, DeserializationError, KeyMismatchError, PaillierError,
                             PaillierPublicKey, PaillierSecretKey, add, decrypt, deserialize,
                             deserialize_many, encrypt, keygen, keypair_from_primes, load_keypair,
                             require_production_key, rerandomize, save_keypair, scalar_mul,
                             serialize, serialize_many)


def test_toy_key_parameters(toy_keys):
    pk, sk = toy_keys
    assert (pk.n, pk.g, pk.n_sq, pk.bit_length) == (35, 36, 1225, 6)
    assert sk.gamma == 12
    u = pow(pk.g, sk.gamma, pk.n_sq)
    assert sk.delta * ((u - 1) // pk.n) % pk.n == 1


def test_toy_encryption_value(toy_keys):
    pk, sk = toy_keys
    c = pk.encrypt(3, r=2)
    # independent oracle: plain modular arithmetic with the textbook g^m r^n
    assert c.value == pow(36, 3, 1225) * pow(2, 35, 1225) % 1225 == 683
    assert sk.decrypt(c) == 3
    assert sk.decrypt_textbook(c) == 3
    assert pk.encrypt(0, r=1).value == 1


def test_encryption_is_probabilistic(keys128):
    pk, sk = keys128
    rng = random.Random(1)
    a, b = pk.encrypt(42, rng), pk.encrypt(42, rng)
    assert a.value != b.value
    assert sk.decrypt(a) == sk.decrypt(b) == 42


def test_plaintext_range_enforced(toy_keys):
    pk, _ = toy_keys
    with pytest.raises(ValueError):
        pk.encrypt(35, r=2)
    with pytest.raises(ValueError):
        pk.encrypt(-1, r=2)


def test_boundary_roundtrip(keys128):
    pk, sk = keys128
    assert sk.decrypt(pk.encrypt(pk.n - 1, random.Random(0))) == pk.n - 1


def test_small_homomorphic_cases(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(3)
    assert sk.decrypt(pk.encrypt(3, rng) + pk.encrypt(4, rng)) == 7
    assert sk.decrypt(scalar_mul(2, pk.encrypt(5, rng))) == 10
    a = pk.encrypt(9, rng)
    assert sk.decrypt(scalar_mul(pk.n - 1, a)) == pk.n - 9
    assert sk.decrypt(scalar_mul(-1, a)) == pk.n - 9
    assert scalar_mul(1, a) is a


def test_add_zero_changes_ciphertext(keys128):
    pk, sk = keys128
    rng = random.Random(5)
    c = pk.encrypt(77, rng)
    d = c + pk.encrypt_zero(rng)
    assert d.value != c.value and sk.decrypt(d) == 77


@given(st.integers(0, 2**100), st.integers(0, 2**100), st.integers(0, 2**100))
@settings(max_examples=50, deadline=None)
def test_addition_associative(keys128, a, b, c):
    pk, sk = keys128
    rng = random.Random(a ^ b ^ c)
    ca, cb, cc = (pk.encrypt(v % pk.n, rng) for v in (a, b, c))
    assert sk.decrypt((ca + cb) + cc) == sk.decrypt(ca + (cb + cc)) == (a + b + c) % pk.n


@given(st.integers(-2**140, 2**140), st.integers(0, 2**120))
@settings(max_examples=50, deadline=None)
def test_scalar_mul_matches_modular_product(keys128, k, m):
    pk, sk = keys128
    c = pk.encrypt(m % pk.n, random.Random(m))
    assert sk.decrypt(c * k) == (k * m) % pk.n


def test_signed_helpers(keys128):
    pk, sk = keys128
    rng = random.Random(8)
    for v in (-5, 0, 5, -(pk.n // 3)):
        assert sk.decrypt_signed(pk.encrypt_signed(v, rng)) == v
    c = pk.encrypt_signed(10, rng)
    assert sk.decrypt_signed(c - 25) == -15
    assert sk.decrypt_signed(-c) == -10


def test_rerandomize_distinct(keys512):
    pk, sk = keys512
    rng = random.Random(11)
    c = pk.encrypt(7, rng)
    values = {rerandomize(pk, c, rng).value for _ in range(100)}
    assert len(values) == 100 and c.value not in values
    assert sk.decrypt(rerandomize(pk, c, rng)) == 7


def test_crt_matches_textbook(keys512):
    pk, sk = keys512
    rng = random.Random(12)
    for _ in range(50):
        m = rng.randrange(pk.n)
        c = pk.encrypt(m, rng)
        assert sk.decrypt(c) == sk.decrypt_textbook(c) == m


def test_key_mismatch_rejected(keys128, toy_keys):
    pk, _ = keys128
    tpk, _ = toy_keys
    with pytest.raises(KeyMismatchError):
        add(pk.encrypt(1, random.Random(0)), tpk.encrypt(1, r=2))


def test_serialization(keys128):
    pk, sk = keys128
    rng = random.Random(13)
    cs = [pk.encrypt(rng.randrange(pk.n), rng) for _ in range(1000)]
    for c in cs:
        b = serialize(c)
        assert len(b) == 2 * math.ceil(pk.bit_length / 8) == pk.ciphertext_bytes
        assert deserialize(b, pk) == c
    assert deserialize_many(serialize_many(cs), pk) == cs
    with pytest.raises(DeserializationError):
        deserialize(serialize(cs[0])[:-1], pk)
    with pytest.raises(DeserializationError):
        deserialize_many(serialize_many(cs[:2])[:-3], pk)
    with pytest.raises(DeserializationError):
        deserialize(bytes(pk.ciphertext_bytes), pk)


def test_keygen_invariants(keys512):
    pk, sk = keys512
    assert pk.bit_length == pk.n.bit_length() == 512
    assert sk.p != sk.q and sk.p * sk.q == pk.n
    assert gmpy2.is_prime(sk.p, 40) and gmpy2.is_prime(sk.q, 40)
    assert pk.n % 2 == 1 and pk.g == pk.n + 1
    require_production_key(pk)


def test_keygen_is_seeded():
    a = keygen(64, random.Random("x"))[0]
    b = keygen(64, random.Random("x"))[0]
    assert a.n == b.n and a.bit_length == 64


def test_keygen_rejects_bad_sizes():
    with pytest.raises(ValueError):
        keygen(31)
    with pytest.raises(ValueError):
        keygen(65)


def test_production_floor(keys128):
    with pytest.raises(PaillierError):
        require_production_key(keys128[0])


def test_secret_key_validation():
    pk = PaillierPublicKey.from_modulus(35)
    with pytest.raises(PaillierError):
        PaillierSecretKey(5, 5, pk)
    with pytest.raises(PaillierError):
        PaillierSecretKey(3, 11, pk)


def test_key_files(tmp_path, keys128):
    pk, sk = keys128
    path = tmp_path / "k.json"
    save_keypair(path, pk, sk)
    pk2, sk2 = load_keypair(path)
    assert pk2 == pk and sk2.decrypt(pk.encrypt(5, random.Random(0))) == 5
    save_keypair(path, pk)
    assert load_keypair(path) == (pk, None)


def test_functional_aliases(keys128):
    pk, sk = keys128
    c = encrypt(pk, 12, random.Random(0))
    assert isinstance(c, Ciphertext) and decrypt(sk, c) == 12
    assert keypair_from_primes(5, 7)[0].n == 35
