"""Fixed-capacity open-addressing rating maps for numba kernels.

A map is four arrays: ``keys`` (int32, -1 = empty, power-of-two length),
``vals`` (int64), ``used`` (slot indices in insertion order, bounds the
occupancy) and ``state = [size, hash_shift, mask]``.

``mask`` may select a power-of-two prefix of the slots (see ``rm_fit``), so
a map sized for the worst case still probes a cache-sized window for
small neighborhoods.
"""

import numpy as np
from numba import njit

EMPTY = -1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def next_pow2(x: int) -> int:
    return 1 << max(0, int(x - 1).bit_length())


def new_map(capacity: int, occupancy_limit: int | None = None):
    capacity = next_pow2(max(capacity, 2))
    if occupancy_limit is None:
        occupancy_limit = capacity // 2
    shift = 64 - (capacity.bit_length() - 1)
    return (np.full(capacity, EMPTY, np.int32), np.zeros(capacity, np.int64),
            np.empty(occupancy_limit, np.int32), np.array([0, shift, capacity - 1], np.int64))


def map_nbytes(rmap) -> int:
    return sum(a.nbytes for a in rmap)


@njit(nogil=True, cache=True, inline="always")
def slot_of(key, shift):
    return np.int64((np.uint64(key) * _GOLDEN) >> np.uint64(shift))


@njit(nogil=True, cache=True, inline="always")
def rm_add(keys, vals, used, state, key, w):
    """Add ``w`` to ``key``. Returns 1 if the key is new, 0 if it existed,
    -1 if inserting would exceed the occupancy limit."""
    mask = state[2]
    h = slot_of(key, state[1])
    while True:
        k = keys[h]
        if k == key:
            vals[h] += w
            return 0
        if k == EMPTY:
            size = state[0]
            if size >= len(used):
                return -1
            keys[h] = key
            vals[h] = w
            used[size] = h
            state[0] = size + 1
            return 1
        h = (h + 1) & mask


@njit(nogil=True, cache=True, inline="always")
def rm_get(keys, vals, state, key):
    mask = state[2]
    h = slot_of(key, state[1])
    for _ in range(mask + 1):
        k = keys[h]
        if k == key:
            return vals[h]
        if k == EMPTY:
            return np.int64(0)
        h = (h + 1) & mask
    return np.int64(0)


@njit(nogil=True, cache=True, inline="always")
def rm_fit(keys, state, want):
    """Restrict an empty map to the smallest power-of-two prefix holding
    ``2 * want`` slots (capped at the full capacity)."""
    cap = 2
    bits = 1
    while cap < 2 * want and cap < len(keys):
        cap <<= 1
        bits += 1
    state[1] = 64 - bits
    state[2] = cap - 1


@njit(nogil=True, cache=True, inline="always")
def rm_clear(keys, vals, used, state):
    for i in range(state[0]):
        keys[used[i]] = EMPTY
    state[0] = 0


@njit(nogil=True, cache=True, inline="always")
def splitmix(x):
    z = np.uint64(x) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(nogil=True, cache=True, inline="always")
def tie_key(salt, u, c, deterministic):
    """Larger wins. Deterministic mode prefers the smallest id."""
    if deterministic:
        return np.uint64(0xFFFFFFFF) - np.uint64(c)
    return splitmix(salt ^ splitmix(np.uint64(u) * np.uint64(0x100000001) + np.uint64(c)))


@njit(nogil=True, cache=True, inline="always")
def better(r, tk, best_r, best_tk):
    return r > best_r or (r == best_r and tk > best_tk)
