"""Pair-key feature hashing with MurmurHash3 (x86, 32-bit).

A pair of token ids ``(a, b)`` is keyed by the ASCII bytes ``b"<a>-<b>"``
(decimal ids, ``-`` separator) and hashed into ``[0, K)``. Key order matters:
``(a, b)`` and ``(b, a)`` are different keys. Each (layer, head) table has its
own seed, derived as ``murmur3_32(b"L<layer>H<head>", global_seed)``. Both
rules are frozen: checkpoints rely on them to reproduce lookups exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import ConfigError

_M32 = 0xFFFFFFFF


def _fmix32(h: int) -> int:
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & _M32
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & _M32
    h ^= h >> 16
    return h


def murmur3_32(data: bytes, seed: int = 0) -> int:
    """Reference MurmurHash3 x86_32 (pure Python, little-endian block reads)."""
    c1, c2 = 0xCC9E2D51, 0x1B873593
    data = bytes(data)
    n = len(data)
    h1 = seed & _M32
    nblocks = n // 4
    for i in range(0, nblocks * 4, 4):
        k1 = int.from_bytes(data[i:i + 4], "little")
        k1 = (k1 * c1) & _M32
        k1 = ((k1 << 15) | (k1 >> 17)) & _M32
        k1 = (k1 * c2) & _M32
        h1 ^= k1
        h1 = ((h1 << 13) | (h1 >> 19)) & _M32
        h1 = (h1 * 5 + 0xE6546B64) & _M32
    tail = data[nblocks * 4:]
    k1 = 0
    if len(tail) >= 3:
        k1 ^= tail[2] << 16
    if len(tail) >= 2:
        k1 ^= tail[1] << 8
    if len(tail) >= 1:
        k1 ^= tail[0]
        k1 = (k1 * c1) & _M32
        k1 = ((k1 << 15) | (k1 >> 17)) & _M32
        k1 = (k1 * c2) & _M32
        h1 ^= k1
    h1 ^= n
    return _fmix32(h1)


def pair_key(tok_i: int, tok_j: int) -> bytes:
    return f"{tok_i}-{tok_j}".encode("ascii")


def derive_seed(global_seed: int, layer: int, head: int) -> int:
    return murmur3_32(f"L{layer}H{head}".encode("ascii"), global_seed)


@dataclass(frozen=True)
class PairHasher:
    seed: int
    table_size: int

    def __post_init__(self):
        if self.table_size < 1:
            raise ConfigError(f"table size must be positive, got {self.table_size}")

    @classmethod
    def for_table(cls, global_seed: int, layer: int, head: int, table_size: int) -> "PairHasher":
        return cls(derive_seed(global_seed, layer, head), table_size)


def pair_index(tok_i: int, tok_j: int, hasher: PairHasher) -> int:
    """Slot of the ordered pair ``(tok_i, tok_j)``; scalar reference path."""
    if tok_i < 0 or tok_j < 0:
        raise ValueError("token ids must be non-negative")
    return murmur3_32(pair_key(tok_i, tok_j), hasher.seed) % hasher.table_size


def pair_slots_many(left, right, seeds, table_size: int) -> np.ndarray:
    """Vectorised :func:`pair_index` for flat id arrays; shape ``(len(seeds), n)``."""
    left = np.ascontiguousarray(left, dtype=np.int64).reshape(-1)
    right = np.ascontiguousarray(right, dtype=np.int64).reshape(-1)
    if left.shape != right.shape:
        raise ValueError("left and right id arrays differ in length")
    if left.size and min(left.min(), right.min()) < 0:
        raise ValueError("token ids must be non-negative")
    seeds = np.asarray(seeds, dtype=np.int64).reshape(-1)
    return kernels.pair_slots(left, right, seeds, int(table_size))


def sequence_slots(tokens, seeds, table_size: int) -> np.ndarray:
    """All ordered-pair slots of each sequence in ``tokens[..., m]``.

    Returns shape ``(len(seeds),) + tokens.shape[:-1] + (m, m)`` where entry
    ``[s, ..., i, j]`` is the slot of ``(tokens[..., i], tokens[..., j])``.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    m = tokens.shape[-1]
    left = np.broadcast_to(tokens[..., :, None], tokens.shape + (m,))
    right = np.broadcast_to(tokens[..., None, :], tokens.shape + (m,))
    flat = pair_slots_many(left.reshape(-1), right.reshape(-1), seeds, table_size)
    return flat.reshape((len(np.atleast_1d(seeds)),) + tokens.shape + (m,))


@dataclass
class CollisionStats:
    table_size: int
    heads: int
    samples: int
    per_head_rate: np.ndarray
    per_head_stderr: np.ndarray
    all_heads_rate: float
    all_heads_stderr: float

    @property
    def per_head_bound(self) -> float:
        return 1.0 / self.table_size

    @property
    def all_heads_bound(self) -> float:
        return self.table_size ** -float(self.heads)


def _stderr(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def estimate_collision_rate(
    table_size: int,
    heads: int,
    sample_pairs: int,
    rng: np.random.Generator,
    vocab: int = 1 << 20,
    global_seed: int = 0,
) -> CollisionStats:
    """Empirical slot-collision rates of random distinct ordered word pairs.

    Each sample draws two distinct ordered pairs over a ``vocab``-word
    vocabulary and checks whether they land in the same slot under each of
    ``heads`` independently seeded hashers, and under all of them at once.
    """
    if table_size < 2:
        raise ConfigError(f"collision estimate needs K >= 2, got {table_size}")
    if heads < 1:
        raise ConfigError("need at least one head")
    if sample_pairs < 1000:
        raise ConfigError("need at least 1000 sample pairs")
    n = sample_pairs
    a = rng.integers(0, vocab, size=(2, n))
    b = rng.integers(0, vocab, size=(2, n))
    same = (a[0] == a[1]) & (b[0] == b[1])
    while same.any():
        k = int(same.sum())
        a[1, same] = rng.integers(0, vocab, size=k)
        b[1, same] = rng.integers(0, vocab, size=k)
        same = (a[0] == a[1]) & (b[0] == b[1])
    seeds = [derive_seed(global_seed, 0, h) for h in range(heads)]
    s0 = pair_slots_many(a[0], b[0], seeds, table_size)
    s1 = pair_slots_many(a[1], b[1], seeds, table_size)
    hits = s0 == s1
    per_head = hits.mean(axis=1)
    joint = float(hits.all(axis=0).mean())
    return CollisionStats(
        table_size=table_size,
        heads=heads,
        samples=n,
        per_head_rate=per_head,
        per_head_stderr=np.array([_stderr(p, n) for p in per_head]),
        all_heads_rate=joint,
        all_heads_stderr=_stderr(joint, n),
    )
