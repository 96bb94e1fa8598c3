"""Seeded k-wise independent polynomial hash families over the Mersenne prime 2^61 - 1.

Location families map a 64-bit encoded value to a counter index in ``[0, width)``;
sign families map it to -1 or +1. Everything is vectorized over numpy arrays and
computed exactly in uint64 arithmetic (products are split into 32-bit halves so
no intermediate overflows).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MERSENNE_PRIME = (1 << 61) - 1
DEFAULT_DEGREE = 4

LOCATION = "location"
SIGN = "sign"

_P = np.uint64(MERSENNE_PRIME)
_LO32 = np.uint64(0xFFFFFFFF)
_LO29 = np.uint64((1 << 29) - 1)
_S29 = np.uint64(29)
_S32 = np.uint64(32)
_S61 = np.uint64(61)
_EIGHT = np.uint64(8)


class HashError(ValueError):
    pass


def _fold(x: np.ndarray) -> np.ndarray:
    # x < 2^64  ->  x mod p, fully reduced
    x = (x & _P) + (x >> _S61)
    return np.where(x >= _P, x - _P, x)


def mulmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a * b) mod (2^61 - 1) for uint64 arrays with a, b < 2^61."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    a_hi, a_lo = a >> _S32, a & _LO32
    b_hi, b_lo = b >> _S32, b & _LO32
    # 2^64 = 2^3 (mod p)
    hi = (a_hi * b_hi) * _EIGHT
    mid = a_hi * b_lo + a_lo * b_hi
    # mid * 2^32 = (mid >> 29) * 2^61 + (mid & (2^29-1)) * 2^32
    mid_part = (mid >> _S29) + ((mid & _LO29) << _S32)
    lo = _fold(a_lo * b_lo)
    total = _fold(hi) + _fold(mid_part) + lo
    return _fold(total)


def reduce_input(values) -> np.ndarray:
    """Map arbitrary 64-bit integers (signed or unsigned) into [0, p)."""
    arr = np.asarray(values)
    if arr.dtype != np.uint64:
        arr = arr.astype(np.int64, copy=False).view(np.uint64)
    return _fold(arr)


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from an arbitrary tuple of printable parts."""
    text = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class HashFamily:
    kind: str
    degree: int
    seed: int
    coefficients: tuple[int, ...]
    width: int | None = None

    def polynomial(self, values) -> np.ndarray:
        x = reduce_input(values)
        acc = np.full(x.shape, self.coefficients[0], dtype=np.uint64)
        for c in self.coefficients[1:]:
            acc = _fold(mulmod(acc, x) + np.uint64(c))
        return acc

    def __call__(self, values) -> np.ndarray:
        if self.kind == LOCATION:
            return eval_location(self, values)
        return eval_sign(self, values)


def make_family(kind: str, degree: int = DEFAULT_DEGREE, width: int | None = None,
                seed: int = 0) -> HashFamily:
    if kind not in (LOCATION, SIGN):
        raise HashError(f"unknown hash kind {kind!r}")
    if degree < 2:
        raise HashError(f"hash degree must be >= 2, got {degree}")
    if kind == LOCATION:
        if width is None or width < 1 or width & (width - 1):
            raise HashError(f"location width must be a power of two, got {width}")
    else:
        width = None
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    coeffs = [int(c) for c in rng.integers(0, MERSENNE_PRIME, size=degree, dtype=np.uint64)]
    # leading coefficient must be nonzero
    while coeffs[0] == 0:
        coeffs[0] = int(rng.integers(1, MERSENNE_PRIME, dtype=np.uint64))
    return HashFamily(kind, degree, seed, tuple(coeffs), width)


def eval_location(family: HashFamily, values) -> np.ndarray:
    if family.kind != LOCATION:
        raise HashError("eval_location needs a location family")
    h = family.polynomial(values)
    return (h & np.uint64(family.width - 1)).astype(np.int64)


def eval_sign(family: HashFamily, values) -> np.ndarray:
    if family.kind != SIGN:
        raise HashError("eval_sign needs a sign family")
    h = family.polynomial(values)
    return (h & np.uint64(1)).astype(np.int64) * 2 - 1


@dataclass(frozen=True)
class EdgeHashAssignment:
    """Hash functions shared by both endpoints of one join edge within one copy."""

    edge_id: str
    copy: int
    location: HashFamily
    sign: HashFamily


def edge_assignment(seed: int, edge_id: str, copy: int, width: int,
                    degree: int = DEFAULT_DEGREE) -> EdgeHashAssignment:
    loc = make_family(LOCATION, degree, width, derive_seed(seed, "edge", edge_id, copy, LOCATION))
    sgn = make_family(SIGN, degree, None, derive_seed(seed, "edge", edge_id, copy, SIGN))
    return EdgeHashAssignment(edge_id, copy, loc, sgn)


class EdgeHashes:
    """Lazily built, cached (edge, copy) -> EdgeHashAssignment table for one model seed."""

    def __init__(self, seed: int, width: int, copies: int, degree: int = DEFAULT_DEGREE):
        self.seed = seed
        self.width = width
        self.copies = copies
        self.degree = degree
        self._cache: dict[tuple[str, int], EdgeHashAssignment] = {}

    def get(self, edge_id: str, copy: int) -> EdgeHashAssignment:
        key = (edge_id, copy)
        found = self._cache.get(key)
        if found is None:
            found = edge_assignment(self.seed, edge_id, copy, self.width, self.degree)
            self._cache[key] = found
        return found

    def for_edges(self, edges, copy: int) -> dict[str, EdgeHashAssignment]:
        return {e: self.get(e, copy) for e in edges}
