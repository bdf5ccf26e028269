"""Deterministic matrix/field seeding and bit-pattern checksums.

Values are derived from *global* indices with a splitmix-style 64-bit
mixer, so a matrix entry depends only on (seed, salt, row, col) and never
on how the matrix is partitioned across ranks. That makes results
reproducible across rank counts and easy to recompute in any language.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """Scalar splitmix64 finalizer."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def stream_bits(stream_seed: int, start: int, count: int) -> np.ndarray:
    """uint64 outputs [start, start+count) of the splitmix64 stream."""
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    state = np.uint64(stream_seed & _MASK) + idx * np.uint64(_GOLDEN)
    return _mix_array(state)


def unit_doubles(bits: np.ndarray) -> np.ndarray:
    """Map uint64 bit streams to float64 values in [0, 1)."""
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53


def matrix_rows(seed: int, salt: int, row0: int, nrows: int, ncols: int) -> np.ndarray:
    """Rows [row0, row0+nrows) of the (virtual) seeded matrix, shape (nrows, ncols)."""
    stream_seed = mix64((seed & _MASK) ^ mix64(salt))
    bits = stream_bits(stream_seed, row0 * ncols, nrows * ncols)
    return unit_doubles(bits).reshape(nrows, ncols)


SALT_A = 0xA5A5
SALT_B = 0xB6B6
SALT_FIELD = 0xF1E1D


def checksum_bits(arr: np.ndarray) -> int:
    """Sum of float64 element bit patterns, modulo 2**64."""
    flat = np.ascontiguousarray(arr, dtype=np.float64).view(np.uint64)
    with np.errstate(over="ignore"):
        return int(flat.sum(dtype=np.uint64))


def format_checksum(value: int) -> str:
    return f"{value & _MASK:016x}"


def to_i64(value: int) -> int:
    """Reinterpret an unsigned 64-bit pattern as signed (for INT64 reductions)."""
    value &= _MASK
    return value - (1 << 64) if value >= (1 << 63) else value

