"""Utility functions shared across the COMA bench.

This module provides the bit and byte conversions used by the switching
network, the random number generators and the attacks, plus the dictionary
merge helper used when profiles are overridden from files or flags.

Bit order convention: bit ``i`` of an integer word is line ``i`` of the
network, and bytes serialize words little-endian (bit ``i`` lives in byte
``i // 8`` at position ``i % 8``).

Example:
    ```python
    from coma_bench._utils import int_to_bits, bits_to_int, create_data_with_kwargs

    bits = int_to_bits(0b1011, 4)        # array([1, 1, 0, 1], dtype=uint8)
    assert bits_to_int(bits) == 0b1011

    params = create_data_with_kwargs({"n": 64}, U=30)
    # params = {"n": 64, "U": 30}
    ```
"""
from typing import Optional

import numpy as np


def create_data_with_kwargs(data: Optional[dict] = None, **kwargs) -> dict:
    """Create or update a dictionary with additional keyword arguments.

    Keyword arguments whose value is None are skipped, so unset CLI flags
    never override a profile value.

    Args:
        data: Base dictionary to update. If None, a new empty dictionary is created
        **kwargs: Additional key-value pairs to add to the dictionary

    Returns:
        Updated dictionary containing all key-value pairs from both sources
    """
    if data is None:
        data = {}
    for key, value in kwargs.items():
        if value is not None:
            data[key] = value
    return data


def is_power_of_two(value: int) -> bool:
    return value > 0 and value & (value - 1) == 0


def log2(value: int) -> int:
    """Exact base-2 logarithm of a power of two."""
    return value.bit_length() - 1


def ceil_div(numerator, denominator) -> int:
    """Ceiling division that also accepts Fractions."""
    return int(-(-numerator // denominator))


def mask(width: int) -> int:
    return (1 << width) - 1


def int_to_bits(value: int, width: int) -> np.ndarray:
    """Unpack the low ``width`` bits of ``value`` into a uint8 array, LSB first."""
    value &= mask(width)
    raw = np.frombuffer(value.to_bytes((width + 7) // 8 or 1, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:width]


def bits_to_int(bits: np.ndarray) -> int:
    """Pack a 0/1 array (LSB first) back into an integer."""
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little")


def words_to_bit_matrix(words: list[int], width: int) -> np.ndarray:
    """Stack integer words into a (len(words), width) uint8 bit matrix."""
    if not words:
        return np.zeros((0, width), dtype=np.uint8)
    nbytes = (width + 7) // 8
    raw = np.frombuffer(b"".join(w.to_bytes(nbytes, "little") for w in words), dtype=np.uint8)
    return np.unpackbits(raw.reshape(len(words), nbytes), axis=1, bitorder="little")[:, :width]


def bit_matrix_to_words(matrix: np.ndarray) -> list[int]:
    """Inverse of ``words_to_bit_matrix``."""
    packed = np.packbits(np.asarray(matrix, dtype=np.uint8), axis=1, bitorder="little")
    return [int.from_bytes(row.tobytes(), "little") for row in packed]


def rotate_left(value: int, shift: int, width: int) -> int:
    """Rotate a ``width``-bit sequence so that element ``i`` becomes element ``i - shift``."""
    if width == 0:
        return value
    shift %= width
    return ((value >> shift) | (value << (width - shift))) & mask(width)
