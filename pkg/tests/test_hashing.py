import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pairconnect import kernels
from pairconnect.hashing import (PairHasher, derive_seed, estimate_collision_rate, murmur3_32, pair_index,
                                 pair_key, pair_slots_many, sequence_slots)
from pairconnect.numerics import ConfigError, make_rng

# Published MurmurHash3 x86_32 vectors.
VECTORS = [
    (b"", 0x00000000, 0x00000000),
    (b"", 0x00000001, 0x514E28B7),
    (b"", 0xFFFFFFFF, 0x81F16F39),
    (b"\x00\x00\x00\x00", 0x00000000, 0x2362F9DE),
    (b"\x21\x43\x65\x87", 0x00000000, 0xF55B516B),
    (b"\x21\x43\x65\x87", 0x5082EDEE, 0x2362F9DE),
    (b"\x21\x43\x65", 0x00000000, 0x7E4A8634),
    (b"\x21\x43", 0x00000000, 0xA0F7B07A),
    (b"\x21", 0x00000000, 0x72661CF4),
    (b"\xff\xff\xff\xff", 0x00000000, 0x76293B50),
    (b"\x00\x00\x00", 0x00000000, 0x85F0B427),
    (b"\x00\x00", 0x00000000, 0x30F4C306),
    (b"\x00", 0x00000000, 0x514E28B7),
    (b"aaaa", 0x9747B28C, 0x5A97808A),
    (b"abc", 0x00000000, 0xB3DD93FA),
    (b"Hello, world!", 0x9747B28C, 0x24884CBA),
    (b"The quick brown fox jumps over the lazy dog", 0x9747B28C, 0x2FA826CD),
    (b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq", 0, 0xEE925B90),
]


@pytest.mark.parametrize("data,seed,want", VECTORS)
def test_reference_vectors(data, seed, want):
    assert murmur3_32(data, seed) == want
    assert kernels.murmur3_32_bytes(np.frombuffer(data, dtype=np.uint8), seed) == want


def test_pair_key_format():
    assert pair_key(3, 7) == b"3-7"
    assert pair_key(0, 10) == b"0-10"
    assert pair_key(12345, 6) == b"12345-6"


def test_seed_derivation():
    assert derive_seed(0, 0, 0) == murmur3_32(b"L0H0", 0)
    assert derive_seed(5, 2, 3) == murmur3_32(b"L2H3", 5)
    seeds = {derive_seed(0, l, h) for l in range(6) for h in range(4)}
    assert len(seeds) == 24


def test_pair_index_scalar_path():
    h = PairHasher(seed=11, table_size=1000)
    assert pair_index(3, 7, h) == murmur3_32(b"3-7", 11) % 1000


def test_table_size_one_maps_everything_to_zero():
    h = PairHasher(seed=4, table_size=1)
    assert {pair_index(a, b, h) for a in range(10) for b in range(10)} == {0}


@pytest.mark.parametrize("K", [0, -3])
def test_rejects_bad_table_size(K):
    with pytest.raises(ConfigError):
        PairHasher(seed=0, table_size=K)


def test_rejects_negative_ids():
    with pytest.raises(ValueError):
        pair_index(-1, 2, PairHasher(0, 10))
    with pytest.raises(ValueError):
        pair_slots_many([1, -2], [3, 4], [0], 10)


def test_rejects_length_mismatch():
    with pytest.raises(ValueError):
        pair_slots_many([1, 2], [3], [0], 10)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10**9), st.integers(0, 10**9)), min_size=1, max_size=8),
       st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=3),
       st.integers(1, 2**32 - 1))
def test_kernel_matches_scalar_reference(pairs, seeds, K):
    left, right = zip(*pairs)
    got = pair_slots_many(left, right, seeds, K)
    for s_i, s in enumerate(seeds):
        for n, (a, b) in enumerate(pairs):
            assert got[s_i, n] == murmur3_32(pair_key(a, b), s) % K


def test_sequence_slots_layout():
    toks = np.array([[5, 9, 2]])
    got = sequence_slots(toks, [7, 8], 97)
    assert got.shape == (2, 1, 3, 3)
    for s_i, s in enumerate([7, 8]):
        for i in range(3):
            for j in range(3):
                assert got[s_i, 0, i, j] == pair_index(int(toks[0, i]), int(toks[0, j]), PairHasher(s, 97))


def test_ordered_pairs_collide_at_about_one_over_k():
    K, n = 50, 200_000
    rng = make_rng(0)
    a, b = rng.integers(0, 10**6, size=(2, n))
    keep = a != b
    fwd = pair_slots_many(a[keep], b[keep], [derive_seed(0, 0, 0)], K)[0]
    rev = pair_slots_many(b[keep], a[keep], [derive_seed(0, 0, 0)], K)[0]
    rate = float((fwd == rev).mean())
    assert abs(rate - 1 / K) <= 4 * math.sqrt((1 / K) * (1 - 1 / K) / keep.sum())


@pytest.mark.parametrize("K", [101, 1024])
def test_slot_distribution_is_uniform(K):
    n = 200 * K
    rng = make_rng(K)
    a, b = rng.integers(0, 10**6, size=(2, n))
    slots = pair_slots_many(a, b, [derive_seed(0, 1, 2)], K)[0]
    counts = np.bincount(slots, minlength=K)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_collision_rate_for_two_slots():
    st_ = estimate_collision_rate(2, 1, 100_000, make_rng(3))
    assert abs(st_.per_head_rate[0] - 0.5) <= 3 * st_.per_head_stderr[0]


def test_collision_estimator_validation():
    with pytest.raises(ConfigError):
        estimate_collision_rate(1, 1, 10_000, make_rng(0))
    with pytest.raises(ConfigError):
        estimate_collision_rate(10, 0, 10_000, make_rng(0))
    with pytest.raises(ConfigError):
        estimate_collision_rate(10, 1, 10, make_rng(0))


def test_large_table_modulo_is_exact():
    rng = make_rng(9)
    a, b = rng.integers(0, 10**9, size=(2, 5000))
    for K in (2**31 - 1, 2**32 - 1, 3_000_000_019 % 2**32):
        got = pair_slots_many(a, b, [1], K)[0]
        want = [murmur3_32(pair_key(int(x), int(y)), 1) % K for x, y in zip(a[:200], b[:200])]
        assert got[:200].tolist() == want
