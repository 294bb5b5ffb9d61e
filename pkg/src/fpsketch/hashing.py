"""Limited-independence hashing over the Mersenne prime field 2**61 - 1.

A degree-``d`` family is a random polynomial of degree ``d - 1`` with
coefficients drawn uniformly from the field; evaluating it at distinct keys
gives ``d``-wise independent values. A :class:`HashBank` holds one
polynomial per row and evaluates all rows on an array of keys at once,
which is how the sketches use it.

Field multiplication splits operands into 32-bit limbs so intermediate
products never leave the 64-bit word. The Horner loops are compiled with
numba; they dominate the cost of building and feeding every sketch.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numba
import numpy as np

MERSENNE_61 = (1 << 61) - 1

_P = np.uint64(MERSENNE_61)
_LO32 = np.uint64(0xFFFFFFFF)
_LO29 = np.uint64((1 << 29) - 1)
_S3 = np.uint64(3)
_S29 = np.uint64(29)
_S32 = np.uint64(32)
_S61 = np.uint64(61)
_ONE = np.uint64(1)


@numba.njit(cache=True, inline="always")
def _mulmod_scalar(a, b):
    # a, b < 2**61 + 8: limb products and the folded sums below stay under 2**64
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    mid = a_hi * b_lo + a_lo * b_hi  # weight 2**32, < 2**62
    ll = a_lo * b_lo
    # 2**64 == 8 and 2**61 == 1 (mod P)
    x = ((a_hi * b_hi) << _S3) + (mid >> _S29) + ((mid & _LO29) << _S32)
    x = (x & _P) + (x >> _S61)
    x += (ll & _P) + (ll >> _S61)
    x = (x & _P) + (x >> _S61)
    if x >= _P:
        x -= _P
    return x


@numba.vectorize(["uint64(uint64, uint64)"], cache=True)
def _mulmod_ufunc(a, b):
    return _mulmod_scalar(a, b)


@numba.njit(cache=True)
def _horner(coefficients, keys):
    rows, degree = coefficients.shape
    out = np.empty((rows, keys.shape[0]), dtype=np.uint64)
    for r in range(rows):
        for i in range(keys.shape[0]):
            acc = coefficients[r, 0]
            for j in range(1, degree):
                acc = _mulmod_scalar(acc, keys[i]) + coefficients[r, j]
                if acc >= _P:
                    acc -= _P
            out[r, i] = acc
    return out


@numba.njit(cache=True)
def _signed_sums(coefficients, keys, weights):
    # sum_i weights[i] * (2 * (h_r(keys[i]) mod 2) - 1) for every row r
    rows, degree = coefficients.shape
    out = np.zeros(rows, dtype=np.int64)
    for r in range(rows):
        total = 0
        for i in range(keys.shape[0]):
            acc = coefficients[r, 0]
            for j in range(1, degree):
                acc = _mulmod_scalar(acc, keys[i]) + coefficients[r, j]
                if acc >= _P:
                    acc -= _P
            if acc & _ONE:
                total += weights[i]
            else:
                total -= weights[i]
        out[r] = total
    return out


def mulmod(a, b) -> np.ndarray:
    """Elementwise ``a * b mod (2**61 - 1)`` for uint64 inputs below the prime."""
    return _mulmod_ufunc(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64))


def _as_keys(keys) -> np.ndarray:
    keys = np.ascontiguousarray(np.atleast_1d(np.asarray(keys)).astype(np.uint64).ravel())
    if keys.size and int(keys.max()) >= MERSENNE_61:
        raise ValueError("keys must be smaller than the field prime")
    return keys


def poly_eval(coefficients: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Horner-evaluate one polynomial per row of ``coefficients`` at ``keys``.

    ``coefficients`` has shape ``(rows, degree)`` with the leading coefficient
    first. Returns field values of shape ``(rows, len(keys))``.
    """
    coefficients = np.ascontiguousarray(coefficients, dtype=np.uint64)
    return _horner(coefficients, _as_keys(keys))


def _tag(tag: str | int) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    return int(tag)


def derive_seed(master_seed: int, *tags: str | int) -> np.random.SeedSequence:
    """Branch a master seed by a path of structure tags and indices.

    The same ``(master_seed, tags)`` always yields the same stream, and
    different tag paths yield independent streams.
    """
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(_tag(t) for t in tags))


def child_seed(seed: np.random.SeedSequence | int, *tags: str | int) -> np.random.SeedSequence:
    """Extend an existing seed's branch path by ``tags``."""
    if not isinstance(seed, np.random.SeedSequence):
        return derive_seed(seed, *tags)
    return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(_tag(t) for t in tags))


def make_rng(master_seed: int, *tags: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *tags))


@dataclass(frozen=True)
class PolyHashFamily:
    """A single ``degree``-wise independent hash ``[0, P) -> [0, range)``."""

    degree: int
    coefficients: tuple[int, ...]
    range: int
    field_prime: int = MERSENNE_61

    def __post_init__(self):
        if self.degree < 1 or len(self.coefficients) != self.degree:
            raise ValueError("need exactly `degree` coefficients")
        if self.range < 1:
            raise ValueError("range must be positive")
        if any(not 0 <= c < self.field_prime for c in self.coefficients):
            raise ValueError("coefficients must lie in the field")

    @classmethod
    def from_seed(cls, seed: int | np.random.SeedSequence, degree: int, range: int) -> PolyHashFamily:
        rng = np.random.default_rng(seed)
        coefficients = rng.integers(0, MERSENNE_61, size=degree, dtype=np.uint64)
        return cls(degree, tuple(int(c) for c in coefficients), range)

    def field_value(self, keys) -> np.ndarray:
        coefficients = np.array([self.coefficients], dtype=np.uint64)
        return poly_eval(coefficients, np.atleast_1d(keys))[0]

    def eval(self, key: int) -> int:
        return int(self.evaluate([key])[0])

    def evaluate(self, keys) -> np.ndarray:
        return (self.field_value(keys) % np.uint64(self.range)).astype(np.int64)

    __call__ = eval


@dataclass(frozen=True)
class RademacherFamily:
    """Random signs ``{-1, +1}`` from the low bit of a polynomial hash."""

    base: PolyHashFamily

    @classmethod
    def from_seed(cls, seed, independence: int) -> RademacherFamily:
        return cls(PolyHashFamily.from_seed(seed, independence, 2))

    @property
    def independence(self) -> int:
        return self.base.degree

    def sign(self, key: int) -> int:
        return int(self.signs([key])[0])

    def signs(self, keys) -> np.ndarray:
        return 2 * self.base.evaluate(keys) - 1

    __call__ = sign


class HashBank:
    """``rows`` independent polynomial hashes of a common degree and range.

    This is the stacked form used by the sketches: evaluating the bank on
    ``m`` keys returns a ``(rows, m)`` array in one vectorised pass.
    """

    def __init__(self, coefficients: np.ndarray, range: int):
        coefficients = np.asarray(coefficients, dtype=np.uint64)
        if coefficients.ndim != 2 or coefficients.shape[1] < 1:
            raise ValueError("coefficients must have shape (rows, degree)")
        if range < 1:
            raise ValueError("range must be positive")
        self.coefficients = coefficients
        self.range = int(range)

    @classmethod
    def from_seed(cls, seed, rows: int, degree: int, range: int) -> HashBank:
        rng = np.random.default_rng(seed)
        coefficients = rng.integers(0, MERSENNE_61, size=(rows, degree), dtype=np.uint64)
        return cls(coefficients, range)

    @property
    def rows(self) -> int:
        return self.coefficients.shape[0]

    @property
    def degree(self) -> int:
        return self.coefficients.shape[1]

    def family(self, row: int) -> PolyHashFamily:
        return PolyHashFamily(self.degree, tuple(int(c) for c in self.coefficients[row]), self.range)

    def evaluate(self, keys) -> np.ndarray:
        values = poly_eval(self.coefficients, np.atleast_1d(keys))
        return (values % np.uint64(self.range)).astype(np.int64)

    def signs(self, keys) -> np.ndarray:
        """Rademacher view of the bank; only meaningful when ``range == 2``."""
        if self.range != 2:
            raise ValueError("sign banks must have range 2")
        return 2 * self.evaluate(keys) - 1

    def signed_sums(self, keys, weights) -> np.ndarray:
        """``signs(keys) @ weights`` without materialising the sign matrix."""
        if self.range != 2:
            raise ValueError("sign banks must have range 2")
        keys = _as_keys(keys)
        weights = np.ascontiguousarray(weights, dtype=np.int64).ravel()
        if weights.shape != keys.shape:
            raise ValueError("keys and weights must have the same length")
        return _signed_sums(np.ascontiguousarray(self.coefficients), keys, weights)


def level_of(level_bits: np.ndarray) -> np.ndarray:
    """Deepest level reached per key from a ``(L, m)`` array of 0/1 bits.

    Key ``i`` is in level ``l`` iff its first ``l`` bits are all one, so the
    result is the length of the leading run of ones.
    """
    level_bits = np.asarray(level_bits)
    if level_bits.shape[0] == 0:
        return np.zeros(level_bits.shape[1], dtype=np.int64)
    return np.cumprod(level_bits, axis=0).sum(axis=0).astype(np.int64)


class LevelHashes:
    """Independent ``d``-wise membership bits ``g_1 .. g_L``."""

    def __init__(self, bank: HashBank):
        if bank.range != 2:
            raise ValueError("level membership hashes have range 2")
        self.bank = bank

    @classmethod
    def from_seed(cls, seed, levels: int, degree: int) -> LevelHashes:
        return cls(HashBank.from_seed(seed, levels, degree, 2))

    @property
    def levels(self) -> int:
        return self.bank.rows

    def families(self) -> list[PolyHashFamily]:
        return [self.bank.family(l) for l in range(self.levels)]

    def level_of(self, keys) -> np.ndarray:
        return level_of(self.bank.evaluate(keys))
