"""Compiled inner loops: batched pair-key hashing and table gather/scatter.

All uint32 arithmetic is done in int64 with explicit ``& 0xFFFFFFFF`` masks;
int64 multiplication wraps in two's complement, so the low 32 bits are exact.
"""

import numba
import numpy as np

_M32 = 0xFFFFFFFF
_C1 = 0xCC9E2D51
_C2 = 0x1B873593


@numba.njit(cache=True, inline="always")
def _rotl32(x, r):
    return ((x << r) | (x >> (32 - r))) & _M32


@numba.njit(cache=True, inline="always")
def _fmix32(h):
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & _M32
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & _M32
    h ^= h >> 16
    return h


@numba.njit(cache=True, inline="always")
def _mix_k1(k1):
    k1 = (k1 * _C1) & _M32
    k1 = _rotl32(k1, 15)
    return (k1 * _C2) & _M32


@numba.njit(cache=True)
def murmur3_32_bytes(data, seed):
    """MurmurHash3 x86_32 of a uint8 array."""
    n = data.shape[0]
    h1 = seed & _M32
    nblocks = n // 4
    for b in range(nblocks):
        i = 4 * b
        k1 = (np.int64(data[i]) | (np.int64(data[i + 1]) << 8)
              | (np.int64(data[i + 2]) << 16) | (np.int64(data[i + 3]) << 24))
        h1 ^= _mix_k1(k1)
        h1 = _rotl32(h1, 13)
        h1 = (h1 * 5 + 0xE6546B64) & _M32
    tail = 4 * nblocks
    rem = n & 3
    k1 = 0
    if rem >= 3:
        k1 ^= np.int64(data[tail + 2]) << 16
    if rem >= 2:
        k1 ^= np.int64(data[tail + 1]) << 8
    if rem >= 1:
        k1 ^= np.int64(data[tail])
        h1 ^= _mix_k1(k1)
    h1 ^= n
    return _fmix32(h1)


@numba.njit(cache=True, inline="always")
def _write_decimal(v, buf, pos):
    if v == 0:
        buf[pos] = 48
        return pos + 1
    start = pos
    while v > 0:
        buf[pos] = 48 + v % 10
        v //= 10
        pos += 1
    lo = start
    hi = pos - 1
    while lo < hi:
        t = buf[lo]
        buf[lo] = buf[hi]
        buf[hi] = t
        lo += 1
        hi -= 1
    return pos


@numba.njit(cache=True, inline="always")
def _mod_u32(h, k, inv_k):
    # h % k for 0 <= h < 2**32 via a double-precision quotient; the estimate
    # is off by at most one, which the two corrections fix exactly.
    q = np.int64(h * inv_k)
    r = h - q * k
    if r < 0:
        r += k
    elif r >= k:
        r -= k
    return r


@numba.njit(cache=True)
def pair_slots(left, right, seeds, table_size):
    """Slot of key ``str(left[n]) + '-' + str(right[n])`` under every seed.

    Returns an int64 array of shape ``(len(seeds), len(left))``. The seed-free
    block mixing is computed once per key and shared across seeds.
    """
    n_keys = left.shape[0]
    n_seeds = seeds.shape[0]
    out = np.empty((n_seeds, n_keys), dtype=np.int64)
    buf = np.empty(48, dtype=np.int64)
    blocks = np.empty(12, dtype=np.int64)
    inv_k = 1.0 / table_size
    for n in range(n_keys):
        pos = _write_decimal(left[n], buf, 0)
        buf[pos] = 45
        pos = _write_decimal(right[n], buf, pos + 1)
        nblocks = pos // 4
        for b in range(nblocks):
            i = 4 * b
            blocks[b] = _mix_k1(buf[i] | (buf[i + 1] << 8) | (buf[i + 2] << 16) | (buf[i + 3] << 24))
        tail = 4 * nblocks
        rem = pos & 3
        k1 = 0
        if rem >= 3:
            k1 ^= buf[tail + 2] << 16
        if rem >= 2:
            k1 ^= buf[tail + 1] << 8
        if rem >= 1:
            k1 ^= buf[tail]
            k1 = _mix_k1(k1)
        for s in range(n_seeds):
            h1 = seeds[s] & _M32
            for b in range(nblocks):
                h1 ^= blocks[b]
                h1 = _rotl32(h1, 13)
                h1 = (h1 * 5 + 0xE6546B64) & _M32
            h1 ^= k1
            h1 ^= pos
            out[s, n] = _mod_u32(_fmix32(h1), table_size, inv_k)
    return out


@numba.njit(cache=True)
def pair_sum_forward(table, slots):
    """``out[r] = sum_j table[slots[r, j]]`` without materialising the rows."""
    rows, width = slots.shape
    d = table.shape[1]
    out = np.zeros((rows, d), dtype=table.dtype)
    for r in range(rows):
        for j in range(width):
            row = table[slots[r, j]]
            for c in range(d):
                out[r, c] += row[c]
    return out


@numba.njit(cache=True)
def pair_sum_backward(grad, slots, table_size):
    rows, width = slots.shape
    d = grad.shape[1]
    out = np.zeros((table_size, d), dtype=grad.dtype)
    for r in range(rows):
        g = grad[r]
        for j in range(width):
            dst = out[slots[r, j]]
            for c in range(d):
                dst[c] += g[c]
    return out


@numba.njit(cache=True)
def scatter_add_rows(indices, grad, table_size):
    """Transpose of a row gather: repeated indices accumulate."""
    d = grad.shape[1]
    out = np.zeros((table_size, d), dtype=grad.dtype)
    for r in range(indices.shape[0]):
        dst = out[indices[r]]
        g = grad[r]
        for c in range(d):
            dst[c] += g[c]
    return out
