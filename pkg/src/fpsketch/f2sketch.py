"""One-sided second-moment estimate from a median-of-means tug-of-war sketch.

Every accumulator holds ``sum_i f_i * sign(i)`` for its own 4-wise
independent sign family, so its square is an unbiased estimate of ``F2``.
Means over ``per_group`` squares are combined by a median over ``groups``;
the result is then divided by ``1 - tau`` so that, whenever the raw value is
within ``tau * F2``, the reported value never undershoots ``F2``.
"""

from __future__ import annotations

import math

import numpy as np

from .countsketch import COUNTER_LIMIT
from .hashing import HashBank


def ams_dimensions(tau: float, failure: float) -> tuple[int, int]:
    """``(groups, per_group)`` for relative accuracy ``tau`` with prob ``1 - failure``.

    Chebyshev on the mean of ``per_group`` squares (variance at most
    ``2 F2**2 / per_group``) gives per-group failure at most 1/4; a Hoeffding
    bound on the median of ``groups`` such means gives ``exp(-groups / 8)``.
    """
    if not 0 < tau < 1 or not 0 < failure < 1:
        raise ValueError("tau and failure must lie in (0, 1)")
    per_group = math.ceil(8 / tau**2)
    groups = math.ceil(8 * math.log(1 / failure))
    groups += 1 - groups % 2
    return groups, per_group


class AmsSketch:
    def __init__(self, groups: int, per_group: int, seed, *, tau: float = 0.0, independence: int = 4):
        if groups < 1 or per_group < 1:
            raise ValueError("groups and per_group must be positive")
        if not 0 <= tau < 1:
            raise ValueError("tau must lie in [0, 1)")
        self.groups = groups
        self.per_group = per_group
        self.tau = tau
        self.correction = 1.0 / (1.0 - tau)
        self.sign_families = HashBank.from_seed(seed, groups * per_group, independence, 2)
        self.accumulators = np.zeros((groups, per_group), dtype=np.int64)

    @classmethod
    def for_accuracy(cls, tau: float, failure: float, seed) -> AmsSketch:
        groups, per_group = ams_dimensions(tau, failure)
        return cls(groups, per_group, seed, tau=tau)

    def update(self, item: int, delta: int) -> None:
        self.update_many([item], [delta])

    def update_many(self, items, deltas) -> None:
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        deltas = np.atleast_1d(np.asarray(deltas, dtype=np.int64))
        if items.shape != deltas.shape:
            raise ValueError("items and deltas must have the same length")
        # linear sketch: only the net delta per distinct item matters
        keys, inverse = np.unique(items, return_inverse=True)
        net = np.zeros(keys.size, dtype=np.int64)
        np.add.at(net, inverse, deltas)
        # |change| <= sum |net|, so checking first keeps the int64 sums exact
        headroom = COUNTER_LIMIT - int(np.abs(self.accumulators).max(initial=0))
        if int(np.abs(net).sum()) >= headroom:
            raise OverflowError("AMS accumulator exceeded its 64-bit budget")
        flat = self.accumulators.reshape(-1)
        flat += self.sign_families.signed_sums(keys, net)

    def raw_estimate(self) -> float:
        """Median over groups of the mean squared accumulator."""
        squares = self.accumulators.astype(np.float64) ** 2
        return float(np.median(squares.mean(axis=1)))

    def estimate_f2(self) -> float:
        return self.raw_estimate() * self.correction

    def merge(self, other: AmsSketch) -> AmsSketch:
        if self.accumulators.shape != other.accumulators.shape or not np.array_equal(
            self.sign_families.coefficients, other.sign_families.coefficients
        ):
            raise ValueError("can only merge AMS sketches with identical shape and seeds")
        merged = object.__new__(AmsSketch)
        merged.__dict__.update(self.__dict__)
        merged.accumulators = self.accumulators + other.accumulators
        return merged

    def is_zero(self) -> bool:
        return not self.accumulators.any()

    @property
    def space_words(self) -> int:
        return self.accumulators.size

    def to_bytes(self) -> bytes:
        return self.accumulators.astype("<i8").tobytes(order="C")

    def load_bytes(self, data: bytes) -> None:
        acc = np.frombuffer(data, dtype="<i8")
        if acc.size != self.accumulators.size:
            raise ValueError("snapshot size does not match sketch dimensions")
        self.accumulators = acc.reshape(self.accumulators.shape).astype(np.int64)
