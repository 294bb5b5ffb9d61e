"""CountSketch with per-row reads and collision inspection.

Each of ``rows`` tables has ``width`` signed 64-bit counters. An update
``(i, v)`` adds ``v * sign_j(i)`` to bucket ``h_j(i)`` of every row ``j``; a
point query returns the median of the signed row reads. The sketch is
linear, so same-seed sketches of two streams add up to the sketch of their
concatenation.

The Taylor estimator needs more than the median: it reads individual rows
(:meth:`CountSketch.row_estimate`) and checks which rows keep an item away
from a set of other items (:meth:`CountSketch.isolated_rows`).
"""

from __future__ import annotations

import numpy as np

from .hashing import HashBank, child_seed

# |counter| stays far below 2**63 so checked adds cannot wrap silently
COUNTER_LIMIT = 1 << 62


class CountSketch:
    def __init__(
        self,
        width: int,
        rows: int,
        seed,
        *,
        hash_degree: int = 2,
        sign_degree: int = 2,
        universe: int | None = None,
    ):
        if width < 1 or rows < 1:
            raise ValueError(f"width and rows must be positive, got {width}, {rows}")
        self.width = int(width)
        self.rows = int(rows)
        self.hash_independence = hash_degree
        self.sign_independence = sign_degree
        self.row_hashes = HashBank.from_seed(child_seed(seed, "rows"), rows, hash_degree, width)
        self.row_signs = HashBank.from_seed(child_seed(seed, "signs"), rows, sign_degree, 2)
        self.counters = np.zeros((rows, width), dtype=np.int64)
        self.universe = universe
        self._bucket_table = None
        self._sign_table = None

    # -- hashing -----------------------------------------------------------

    def _tables(self):
        if self._bucket_table is None:
            keys = np.arange(self.universe + 1)
            self._bucket_table = self.row_hashes.evaluate(keys).astype(np.int32)
            self._sign_table = self.row_signs.signs(keys).astype(np.int8)
        return self._bucket_table, self._sign_table

    def buckets(self, keys) -> np.ndarray:
        """Bucket of each key in each row, shape ``(rows, len(keys))``."""
        keys = np.atleast_1d(np.asarray(keys, dtype=np.int64))
        if self.universe is not None and (keys.size == 0 or keys.max() <= self.universe):
            return self._tables()[0][:, keys]
        return self.row_hashes.evaluate(keys)

    def signs(self, keys) -> np.ndarray:
        keys = np.atleast_1d(np.asarray(keys, dtype=np.int64))
        if self.universe is not None and (keys.size == 0 or keys.max() <= self.universe):
            return self._tables()[1][:, keys]
        return self.row_signs.signs(keys)

    # -- updates -----------------------------------------------------------

    def update(self, item: int, delta: int) -> None:
        self.update_many([item], [delta])

    def update_many(self, items, deltas) -> None:
        """Apply a batch of updates; equivalent to calling :meth:`update` in order."""
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        deltas = np.atleast_1d(np.asarray(deltas, dtype=np.int64))
        if items.shape != deltas.shape:
            raise ValueError("items and deltas must have the same length")
        if items.size == 0:
            return
        flat = self.buckets(items) + (np.arange(self.rows, dtype=np.int64) * self.width)[:, None]
        weighted = self.signs(items).astype(np.int64) * deltas[None, :]
        np.add.at(self.counters.reshape(-1), flat.ravel(), weighted.ravel())
        touched = self.counters.reshape(-1)[flat.ravel()]
        if np.abs(touched).max() >= COUNTER_LIMIT:
            raise OverflowError("CountSketch counter exceeded its 64-bit budget")

    # -- queries -----------------------------------------------------------

    def row_reads(self, keys) -> np.ndarray:
        """Signed reads ``T_j[h_j(i)] * sign_j(i)`` of shape ``(rows, len(keys))``."""
        b = self.buckets(keys)
        return np.take_along_axis(self.counters, b.astype(np.int64), axis=1) * self.signs(keys)

    def point_estimates(self, keys) -> np.ndarray:
        """Median row read per key; even row counts use the lower median."""
        reads = np.sort(self.row_reads(keys), axis=0)
        return reads[(self.rows - 1) // 2]

    def point_estimate(self, item: int) -> int:
        return int(self.point_estimates([item])[0])

    def row_estimate(self, row: int, item: int, sign_hint: int = 1) -> int:
        if not 0 <= row < self.rows:
            raise IndexError(f"row {row} out of range for {self.rows} rows")
        bucket = int(self.buckets([item])[row, 0])
        sign = int(self.signs([item])[row, 0])
        return int(self.counters[row, bucket]) * sign * sign_hint

    def row_isolated(self, row: int, item: int, others) -> bool:
        """True iff ``item`` shares its row-``row`` bucket with none of ``others``."""
        others = [o for o in others]
        if item in others:
            raise ValueError("item must not be among the others")
        if not others:
            return True
        b = self.buckets([item] + others)[row]
        return bool(np.all(b[1:] != b[0]))

    def isolated_rows(self, members) -> np.ndarray:
        """Boolean ``(rows, len(members))``: member alone among members in that row."""
        members = np.atleast_1d(np.asarray(members, dtype=np.int64))
        if members.size == 0:
            return np.zeros((self.rows, 0), dtype=bool)
        flat = self.buckets(members) + (np.arange(self.rows, dtype=np.int64) * self.width)[:, None]
        occupancy = np.bincount(flat.ravel(), minlength=self.rows * self.width)
        return occupancy[flat] == 1

    # -- linearity ---------------------------------------------------------

    def same_shape_and_seed(self, other: CountSketch) -> bool:
        return (
            self.width == other.width
            and self.rows == other.rows
            and np.array_equal(self.row_hashes.coefficients, other.row_hashes.coefficients)
            and np.array_equal(self.row_signs.coefficients, other.row_signs.coefficients)
        )

    def copy(self) -> CountSketch:
        clone = object.__new__(CountSketch)
        clone.__dict__.update(self.__dict__)
        clone.counters = self.counters.copy()
        return clone

    def merge(self, other: CountSketch) -> CountSketch:
        if not self.same_shape_and_seed(other):
            raise ValueError("can only merge sketches with identical dimensions and seeds")
        merged = self.copy()
        merged.counters += other.counters
        return merged

    def __add__(self, other: CountSketch) -> CountSketch:
        return self.merge(other)

    def is_zero(self) -> bool:
        return not self.counters.any()

    @property
    def space_words(self) -> int:
        return self.counters.size

    # -- snapshots ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Row-major little-endian int64 counter dump."""
        return self.counters.astype("<i8").tobytes(order="C")

    def load_bytes(self, data: bytes) -> None:
        counters = np.frombuffer(data, dtype="<i8")
        if counters.size != self.rows * self.width:
            raise ValueError("snapshot size does not match sketch dimensions")
        self.counters = counters.reshape(self.rows, self.width).astype(np.int64)

