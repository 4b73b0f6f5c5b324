"""Binary code for (symbol pair, instruction) tokens.

Codewords have the form ``E(z) XOR R(delta)``.  ``R`` repeats one of the four
even-weight 3-bit patterns, so any two instructions under the same ``z`` sit at
distance exactly ``2M/3``.  ``E`` is a random GF(2)-linear map of the pair
index ``s1 * |Sigma| + s2``; since ``E(z0) ^ E(z1) = E(z0 ^ z1)`` the
cross-pair condition only has to be checked on the ``2^k - 1`` nonzero
differences under each of the four mask shifts, which is done exhaustively.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from enum import IntEnum
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np
from scipy.stats import binom

from ics16._util import Rational, as_fraction, derive_seed
from ics16.errors import ConstructionFailed, LengthMismatch


class Instr(IntEnum):
    ZERO = 0
    ONE = 1
    BACK = 2
    ASK = 3

    @property
    def glyph(self) -> str:
        return "01<?"[self]


_PATTERNS = {Instr.ZERO: 0b011, Instr.ONE: 0b101, Instr.BACK: 0b110, Instr.ASK: 0b000}


@lru_cache(maxsize=64)
def instruction_mask(delta: Instr, M: int) -> int:
    pattern = _PATTERNS[Instr(delta)]
    out = 0
    for _ in range(M // 3):
        out = (out << 3) | pattern
    return out


def min_cross_distance(M: int, epsilon: Rational) -> int:
    return math.ceil((Fraction(1, 2) - as_fraction(epsilon)) * M)


def pair_bits(alphabet_size: int) -> int:
    if alphabet_size < 2 or alphabet_size & (alphabet_size - 1):
        raise ValueError(f"alphabet_size must be a power of two >= 2, got {alphabet_size}")
    return 2 * (alphabet_size.bit_length() - 1)


def suggest_length(alphabet_size: int, epsilon: Rational, slack: float = 0.5) -> int:
    """Smallest multiple of 6 where a random linear ``E`` is expected to have at
    most ``slack`` light words among its ``4 * 2^k`` checked combinations."""
    eps = as_fraction(epsilon)
    checks = 4 * (1 << pair_bits(alphabet_size))
    M = 6
    while True:
        need = min_cross_distance(M, eps)
        if checks * binom.cdf(need - 1, M, 0.5) <= slack:
            return M
        M += 6


def _to_words(value: int, n_words: int) -> np.ndarray:
    return np.frombuffer(value.to_bytes(8 * n_words, "little"), dtype="<u8")


@dataclass(frozen=True)
class EccParams:
    alphabet_size: int
    epsilon: Fraction
    M: int

    def __post_init__(self) -> None:
        if self.M < 3 or self.M % 3:
            raise ValueError(f"M must be a positive multiple of 3, got {self.M}")


@dataclass(frozen=True)
class DistanceReport:
    M: int
    min_cross_z: int | None
    min_same_z: int | None
    cross_required: int
    same_required: int

    @property
    def cross_ok(self) -> bool:
        return self.min_cross_z is None or self.min_cross_z >= self.cross_required

    @property
    def same_ok(self) -> bool:
        return self.min_same_z is None or self.min_same_z >= self.same_required

    @property
    def passed(self) -> bool:
        return self.cross_ok and self.same_ok

    def to_dict(self) -> dict:
        def frac(v):
            return None if v is None else str(Fraction(v, self.M))

        return {
            "M": self.M,
            "min_cross_z_bits": self.min_cross_z,
            "min_same_z_bits": self.min_same_z,
            "cross_required_bits": self.cross_required,
            "same_required_bits": self.same_required,
            "min_cross_z": frac(self.min_cross_z),
            "min_same_z": frac(self.min_same_z),
            "verified": self.passed,
        }


@dataclass(frozen=True, eq=False)
class EccCode:
    params: EccParams
    seed: int
    rows: tuple[int, ...]  # generator rows, one per bit of the pair index

    @property
    def M(self) -> int:
        return self.params.M

    @property
    def alphabet_size(self) -> int:
        return self.params.alphabet_size

    @property
    def n_pairs(self) -> int:
        return self.alphabet_size**2

    @property
    def n_words(self) -> int:
        return (self.M + 63) // 64

    def z_index(self, z: tuple[int, int]) -> int:
        s1, s2 = z
        q = self.alphabet_size
        if not (0 <= s1 < q and 0 <= s2 < q):
            raise ValueError(f"symbol pair {z} outside alphabet {q}")
        return s1 * q + s2

    def z_pair(self, index: int) -> tuple[int, int]:
        return divmod(int(index), self.alphabet_size)

    def base(self, index: int) -> int:
        out = 0
        for i, row in enumerate(self.rows):
            if index >> i & 1:
                out ^= row
        return out

    def encode(self, z: tuple[int, int], delta: Instr) -> int:
        return self.base(self.z_index(z)) ^ instruction_mask(Instr(delta), self.M)

    @cached_property
    def base_table(self) -> np.ndarray:
        """``E(z)`` for every pair index as little-endian 64-bit words, shape ``(|Sigma|^2, words)``."""
        table = np.zeros((1, self.n_words), dtype=np.uint64)
        for row in self.rows:
            table = np.concatenate([table, table ^ _to_words(row, self.n_words)])
        table.setflags(write=False)
        return table

    @cached_property
    def base_columns(self) -> np.ndarray:
        """``base_table`` transposed to ``(words, |Sigma|^2)`` for word-at-a-time scans."""
        cols = np.ascontiguousarray(self.base_table.T)
        cols.setflags(write=False)
        return cols

    @cached_property
    def mask_words(self) -> np.ndarray:
        return np.stack([_to_words(instruction_mask(d, self.M), self.n_words) for d in Instr])

    def table_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.M.to_bytes(4, "little"))
        for row in self.rows:
            h.update(row.to_bytes(8 * self.n_words, "little"))
        return h.hexdigest()

    def descriptor(self) -> dict:
        return {
            "seed": self.seed,
            "M": self.M,
            "alphabet_size": self.alphabet_size,
            "epsilon": str(self.params.epsilon),
            "table_hash": self.table_hash(),
        }


def check_received(code: EccCode, received: int, length: int | None) -> None:
    if length is not None and length != code.M:
        raise LengthMismatch(f"message has {length} bits, code length is {code.M}")
    if received < 0 or received.bit_length() > code.M:
        raise LengthMismatch(f"message does not fit in {code.M} bits")


def question_distances(code: EccCode, received: int, length: int | None = None) -> np.ndarray:
    """Bit distance from ``received`` to ``ECC(z, ?)`` for every pair index ``z``."""
    check_received(code, received, length)
    return _scan(code.base_columns, _to_words(received, code.n_words))


def _scan(columns: np.ndarray, r: np.ndarray) -> np.ndarray:
    acc = np.zeros(columns.shape[1], dtype=np.uint16)
    buf = np.empty(columns.shape[1], dtype=np.uint64)
    for w in range(columns.shape[0]):
        np.bitwise_xor(columns[w], r[w], out=buf)
        acc += np.bitwise_count(buf)
    return acc.astype(np.int64)


def questions_within(code: EccCode, received: int, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Pair indices ``z`` with ``Delta(received, ECC(z, ?)) <= radius``, and those distances.

    Partial distances only grow as words are added, so pairs already past
    ``radius`` after a prefix of words are dropped; the result is exact.
    """
    check_received(code, received, None)
    r = _to_words(received, code.n_words)
    cols = code.base_columns
    # random words gain ~32 bits per word; start pruning once most of them are past radius
    head = max(1, min(cols.shape[0], math.ceil(1.3 * radius / 32)))
    acc = _scan(cols[:head], r[:head])
    idx = np.flatnonzero(acc <= radius)
    acc = acc[idx]
    for w in range(head, cols.shape[0]):
        if idx.size == 0:
            break
        acc += np.bitwise_count(cols[w, idx] ^ r[w])
        keep = acc <= radius
        idx, acc = idx[keep], acc[keep]
    return idx, acc


def pair_distances(code: EccCode, received: int, z: tuple[int, int]) -> list[int]:
    """Bit distances from ``received`` to ``ECC(z, delta)`` for the four instructions."""
    e = code.base(code.z_index(z))
    return [(received ^ e ^ instruction_mask(d, code.M)).bit_count() for d in Instr]


def distance_profile(code: EccCode, received: int, length: int | None = None) -> np.ndarray:
    """Bit distances ``D[z_index, delta]`` to every codeword; ``d_m = D / M``."""
    check_received(code, received, length)
    r = _to_words(received, code.n_words)
    cols = [_scan(code.base_columns, r ^ code.mask_words[d]) for d in Instr]
    return np.stack(cols, axis=1)


def verify_distances(code: EccCode) -> DistanceReport:
    """Exact minima over all codeword pairs.

    Cross-pair distances equal ``wt(E(u) ^ R(d0) ^ R(d1))`` for the difference
    ``u != 0``; every ``u`` in ``[1, |Sigma|^2)`` is a difference of two pair
    indices, so scanning the table against the four mask shifts is exact.
    Same-pair distances are computed row by row.
    """
    M = code.M
    table = code.base_table
    masks = code.mask_words
    same = None
    if code.n_pairs >= 1:
        for a in range(4):
            for b in range(a + 1, 4):
                d = np.bitwise_count((table ^ masks[a]) ^ (table ^ masks[b])).sum(axis=1, dtype=np.int64)
                m = int(d.min())
                same = m if same is None else min(same, m)
    cross = None
    if code.n_pairs > 1:
        nonzero = table[1:]
        for m in masks:
            val = int(np.bitwise_count(nonzero ^ m).sum(axis=1, dtype=np.int64).min())
            cross = val if cross is None else min(cross, val)
    return DistanceReport(
        M=M,
        min_cross_z=cross,
        min_same_z=same,
        cross_required=min_cross_distance(M, code.params.epsilon),
        same_required=math.ceil(Fraction(2, 3) * M),
    )


def build_ecc(
    alphabet_size: int,
    epsilon: Rational,
    seed: int,
    M: int | None = None,
    attempts: int = 8,
    max_growth: int = 4,
) -> EccCode:
    """Build and verify a code.

    With ``M=None`` the length starts at ``suggest_length`` and grows by about
    10% after ``attempts`` rejected generator draws.  With an explicit ``M``
    only that length is tried.
    """
    eps = as_fraction(epsilon)
    k = pair_bits(alphabet_size)
    if not 0 < eps < Fraction(1, 6):
        raise ValueError(f"epsilon must lie in (0, 1/6), got {eps}")
    if M is not None:
        lengths = [M]
    else:
        m0 = suggest_length(alphabet_size, eps)
        lengths = [m0 + 6 * math.ceil(m0 * g / 60) for g in range(max_growth)]
    for length in lengths:
        if length % 3:
            raise ValueError(f"M must be a multiple of 3, got {length}")
        for attempt in range(attempts):
            rng = random.Random(derive_seed(seed, "ecc", length, attempt))
            rows = tuple(rng.getrandbits(length) for _ in range(k))
            code = EccCode(EccParams(alphabet_size, eps, length), seed, rows)
            if verify_distances(code).passed:
                return code
    raise ConstructionFailed(f"no verified code for alphabet {alphabet_size}, eps {eps} at lengths {lengths}")


@lru_cache(maxsize=16)
def cached_ecc(alphabet_size: int, epsilon: str, seed: int, M: int | None = None) -> EccCode:
    return build_ecc(alphabet_size, epsilon, seed, M=M)


def code_from_descriptor(d: dict) -> EccCode:
    code = cached_ecc(int(d["alphabet_size"]), str(as_fraction(d["epsilon"])), int(d["seed"]), int(d["M"]))
    if "table_hash" in d and d["table_hash"] != code.table_hash():
        raise ConstructionFailed("regenerated table does not match the recorded hash")
    return code
