"""Packed lattice keys and an open-addressing hash table for numba kernels.

A point z of Z^d is packed into one int64 by giving each coordinate
``63 // d`` bits with a fixed offset.  Neighbour keys are then obtained by
adding or subtracting a single power of two, so hot loops never unpack.
"""

from __future__ import annotations

import numpy as np
from numba import njit

EMPTY = -1


def key_bits(d: int) -> int:
    return 63 // d


def key_offset(d: int) -> int:
    return 1 << (key_bits(d) - 1)


def step_keys(d: int) -> np.ndarray:
    """Key increments for the 2d unit steps, ordered +e1, -e1, ..., +ed, -ed."""
    bits = key_bits(d)
    out = np.empty(2 * d, dtype=np.int64)
    for i in range(d):
        out[2 * i] = 1 << (bits * i)
        out[2 * i + 1] = -(1 << (bits * i))
    return out


def encode(points: np.ndarray) -> np.ndarray:
    """Pack an (m, d) integer array into m int64 keys."""
    pts = np.asarray(points, dtype=np.int64)
    if pts.ndim == 1:
        pts = pts[None, :]
    d = pts.shape[1]
    bits = key_bits(d)
    off = key_offset(d)
    if pts.size and np.abs(pts).max() >= off:
        raise OverflowError(f"coordinate exceeds packing range +-{off} for d={d}")
    keys = np.zeros(pts.shape[0], dtype=np.int64)
    for i in range(d):
        keys += (pts[:, i] + off) << (bits * i)
    return keys


def decode(keys: np.ndarray, d: int) -> np.ndarray:
    bits = key_bits(d)
    off = key_offset(d)
    mask = (1 << bits) - 1
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((keys.shape[0], d), dtype=np.int64)
    for i in range(d):
        out[:, i] = ((keys >> (bits * i)) & mask) - off
    return out


def table_size(n_items: int) -> int:
    """Power of two at least twice the number of items."""
    size = 16
    while size < 2 * n_items + 2:
        size *= 2
    return size


@njit(cache=True, inline="always")
def _mix(key):
    x = key ^ (key >> 31)
    x = x * 0x7FB5D329728EA185
    x = x ^ (x >> 27)
    return x


@njit(cache=True)
def ht_slot(keys, key):
    """Slot holding ``key`` or the empty slot where it would be inserted."""
    mask = keys.size - 1
    i = _mix(key) & mask
    while True:
        k = keys[i]
        if k == key or k == EMPTY:
            return i
        i = (i + 1) & mask


@njit(cache=True)
def ht_get(keys, vals, key, default):
    i = ht_slot(keys, key)
    if keys[i] == key:
        return vals[i]
    return default


@njit(cache=True)
def ht_contains(keys, key):
    return keys[ht_slot(keys, key)] == key


@njit(cache=True)
def ht_add(keys, vals, key, inc):
    """Add ``inc`` to the value at ``key`` (inserting 0 first); return the new value."""
    i = ht_slot(keys, key)
    if keys[i] != key:
        keys[i] = key
        vals[i] = 0
    vals[i] += inc
    return vals[i]


def new_table(n_items: int) -> tuple[np.ndarray, np.ndarray]:
    size = table_size(n_items)
    return np.full(size, EMPTY, dtype=np.int64), np.zeros(size, dtype=np.int64)
