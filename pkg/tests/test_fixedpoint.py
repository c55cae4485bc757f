import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from encmpc.fixedpoint import (FixedConfig, FixedOverflowError, FixedPointError, FixedVector,
                               OverflowBandError, check_range, clamp, decode, decode_exact, encode,
                               encode_array, from_residue, in_overflow_band, quantize, to_residue,
                               truncate)

N = 1000003


def test_encode_examples():
    cfg = FixedConfig(4, 4)
    assert encode(1.5, cfg) == 24
    assert encode(-1.5, cfg) == -24
    assert encode(0.1, cfg) == 2
    assert decode(24, cfg) == 1.5
    assert decode_exact(-24, cfg) == Fraction(-3, 2)


def test_ties_round_away_from_zero():
    assert quantize(0.5 / 16, 4) == 1
    assert quantize(-0.5 / 16, 4) == -1
    assert quantize(1.5 / 16, 4) == 2


def test_rounding_modes():
    x = -0.3
    assert quantize(x, 4, "floor") == -5
    assert quantize(x, 4, "ceil") == -4
    assert quantize(x, 4, "toward_zero") == -4
    assert quantize(0.3, 4, "toward_zero") == 4
    with pytest.raises(ValueError):
        quantize(x, 4, "stochastic")


def test_encode_overflow():
    with pytest.raises(FixedOverflowError):
        encode(16.0, FixedConfig(4, 8))
    with pytest.raises(FixedOverflowError):
        encode(float("nan"), FixedConfig(4, 8))


def test_config_validation():
    with pytest.raises(ValueError):
        FixedConfig(0, 4)
    cfg = FixedConfig(3, 5)
    assert cfg.one == 32 and cfg.bound(2) == 1 << 13
    assert FixedConfig.from_json(cfg.to_json()) == cfg


def test_residue_examples():
    assert to_residue(24, N) == 24
    assert to_residue(-24, N) == 999979
    with pytest.raises(OverflowBandError):
        to_residue(-(-N // 3), N)
    assert from_residue(N - 1, N) == -1
    with pytest.raises(OverflowBandError) as e:
        from_residue(N // 2, N, index=3)
    assert e.value.index == 3 and e.value.residue == N // 2
    assert in_overflow_band(N // 2, N) and not in_overflow_band(5, N)
    with pytest.raises(ValueError):
        from_residue(N, N)


def test_residue_roundtrip_many():
    rng = random.Random(0)
    n = (1 << 127) - 1
    lim = n // 3
    for _ in range(100_000):
        v = rng.randrange(-lim, lim + 1)
        assert from_residue(to_residue(v, n), n) == v


def test_truncate_examples():
    assert truncate(97, 2, 2, 1) == 24
    assert truncate(-97, 2, 2, 1) == -25
    assert truncate(-97, 2, 2, 2) == -97
    arr = np.array([97, -97], dtype=object)
    assert list(truncate(arr, 2, 3, 1)) == [97 >> 4, -97 >> 4]
    with pytest.raises(ValueError):
        truncate(1, 2, 1, 2)


@given(st.integers(-2**80, 2**80), st.integers(1, 20), st.integers(1, 3))
def test_truncate_is_floor(raw, l_f, scale):
    out = truncate(raw, l_f, scale, 1)
    exact = Fraction(raw, 1 << ((scale - 1) * l_f))
    assert out <= exact < out + 1


def test_encode_array_errors():
    cfg = FixedConfig(8, 4)
    raw, err = encode_array(np.eye(3), cfg)
    assert np.all(err == 0) and raw[0, 0] == 16
    raw, err = encode_array(np.array([[1.5, -1.5], [-1.5, 1.5]]), cfg)
    assert np.all(err == 0)
    M = np.random.default_rng(0).uniform(-10, 10, (20, 20))
    for l_f in (4, 12, 30):
        _, err = encode_array(M, FixedConfig(8, l_f))
        assert np.max(np.abs(err)) <= 2.0 ** (-l_f - 1)


def test_check_range_and_clamp():
    cfg = FixedConfig(2, 2)
    check_range([15, -15], cfg)
    with pytest.raises(FixedOverflowError):
        check_range([16], cfg)
    out = clamp([5, -9, 0], [-4, -4, -4], [4, 4, 4])
    assert list(out) == [4, -4, 0]


def test_fixed_vector_scales():
    cfg = FixedConfig(6, 8)
    v = FixedVector.encode([1.25, -0.5], cfg)
    w = v.rmatmul(np.array([[256, 0], [0, 128]], dtype=object))
    assert w.scale == 2
    assert list(w.decode()) == [1.25, -0.25]
    assert list(w.truncate().raw) == [320, -64]
    with pytest.raises(FixedPointError):
        v + w
    assert list((v - v).raw) == [0, 0]
    assert len(v) == 2
    n = (1 << 61) - 1
    assert list(FixedVector.from_residues(v.residues(n), n, cfg).raw) == list(v.raw)
