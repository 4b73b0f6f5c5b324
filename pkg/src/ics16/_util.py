from __future__ import annotations

from fractions import Fraction
from typing import Union

import numpy as np

Rational = Union[Fraction, int, float, str]

MASK64 = (1 << 64) - 1


def as_fraction(value: Rational) -> Fraction:
    """Exact rational from user input; floats go through their repr (0.4 -> 2/5)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int."""
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


_G = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z += _G
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(master: int, *labels: int | str) -> int:
    """Deterministic child seed from a master seed and a label path."""
    h = mix64(master & MASK64)
    for label in labels:
        if isinstance(label, str):
            label = int.from_bytes(label.encode(), "little") & MASK64
        h = mix64(h ^ (label & MASK64))
    return h
