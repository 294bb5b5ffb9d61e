"""Hierarchical F_p estimator for turnstile streams (p > 2).

Items are routed down a chain of nested substreams ``S_0 ⊇ S_1 ⊇ ... ⊇ S_L``
with ``P[i in S_{l+1} | i in S_l] = 1/2``. Levels ``0..L-1`` keep a heavy-hitter
CountSketch (``HH_l``) and a wider-row estimation CountSketch (``EST_l``); the
last level keeps only a large ``HH_L`` that recovers its survivors exactly.

At query time an item is *discovered* at the first level whose HH estimate
crosses that level's threshold, then sampled into a group whose scale ``2**l``
undoes the subsampling. Each sampled item contributes an averaged Taylor
estimate of ``|f_i|**p`` computed from ``EST`` rows in which it does not
collide with any other top candidate of its level.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .countsketch import CountSketch
from .f2sketch import AmsSketch, ams_dimensions
from .hashing import LevelHashes, derive_seed
from .params import ParamSet
from .tpe import ConstantWeightCode, TaylorConfig, averaged_tp_estimate, build_code

SNAPSHOT_MAGIC = b"GHSS"
SNAPSHOT_VERSION = 1
DEFAULT_MAX_WORDS = 1 << 27


class SketchTooLarge(MemoryError):
    pass


@dataclass(frozen=True)
class Thresholds:
    T: tuple[float, ...]
    Q: tuple[float, ...]

    @property
    def degenerate(self) -> bool:
        return not any(self.T)


@dataclass(frozen=True)
class DiscoveryRecord:
    item: int
    level: int
    f_hat: int


@dataclass(frozen=True)
class SampleAssignment:
    item: int
    group: int

    @property
    def scale(self) -> int:
        return 2**self.group


@dataclass
class EstimateReport:
    fp_hat: float
    f2_hat: float
    thresholds: Thresholds
    nocollision_ok: bool
    group_sizes: list[int]
    discovered: int
    space_words: int
    params_echo: dict
    scaled: bool
    f2_words: int = 0
    failed_level: int | None = None
    smallhh_violations: int = 0
    seeds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["thresholds"] = {"T": list(self.thresholds.T), "Q": list(self.thresholds.Q)}
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


@lru_cache(maxsize=8)
def default_code(k: int, s: int, r: int, seed: int = 0) -> ConstantWeightCode:
    return build_code(k, s, r, seed)


def coin_flip(coin_seed: int, item: int) -> int:
    """Unbiased bit ``K_i``; 1 is heads."""
    return int(derive_seed(coin_seed, "coin", item).generate_state(1)[0] & 1)


def compute_thresholds_from(f2_hat: float, params: ParamSet) -> Thresholds:
    L = params.L
    if f2_hat <= 0:
        return Thresholds(T=(0.0,) * L, Q=(0.0,) * L + (0.5,))
    t0 = math.sqrt(f2_hat / params.B)
    T = tuple((1.0 / (2 * params.alpha)) ** (l / 2) * t0 for l in range(L))
    Q = tuple((1.0 - params.epsbar) * t for t in T) + (0.5,)
    return Thresholds(T=T, Q=Q)


def assign_groups(discoveries, thresholds: Thresholds, coin_seed: int, L: int) -> list[SampleAssignment]:
    """Place discovered items into sample groups.

    Discovered at ``l < L`` with ``|f_hat| >= T_l``: group ``l``. Discovered at
    ``l < L`` below ``T_l``: group ``l + 1`` on heads, unsampled on tails.
    Discovered at ``L``: group ``L``.
    """
    out = []
    for rec in discoveries:
        if rec.level == L:
            out.append(SampleAssignment(rec.item, L))
        elif abs(rec.f_hat) >= thresholds.T[rec.level]:
            out.append(SampleAssignment(rec.item, rec.level))
        elif coin_flip(coin_seed, rec.item):
            out.append(SampleAssignment(rec.item, rec.level + 1))
    return out


class GhssSketch:
    def __init__(
        self,
        params: ParamSet,
        master_seed: int,
        *,
        code: ConstantWeightCode | None = None,
        max_words: int = DEFAULT_MAX_WORDS,
    ):
        self.params = params
        self.master_seed = int(master_seed)
        self._code = code
        L, n, rows = params.L, params.n, params.s_tables
        groups, per_group = ams_dimensions(params.f2_tau, params.f2_failure)
        planned = sum(params.level_width(l) * 3 * rows for l in range(L))
        planned += params.C_L_star * rows + groups * per_group
        if planned > max_words:
            raise SketchTooLarge(f"sketch needs {planned} words, budget is {max_words}")
        self.level_hashes = LevelHashes.from_seed(derive_seed(self.master_seed, "levels"), L, params.d)
        self.hh = [
            CountSketch(
                params.level_width(l),
                rows,
                derive_seed(self.master_seed, "hh", l),
                hash_degree=params.hh_hash_degree,
                sign_degree=params.hh_sign_degree,
                universe=n,
            )
            for l in range(L)
        ]
        self.est = [
            CountSketch(
                params.level_width(l),
                2 * rows,
                derive_seed(self.master_seed, "est", l),
                hash_degree=params.t,
                sign_degree=params.est_sign_degree,
                universe=n,
            )
            for l in range(L)
        ]
        self.hh_last = CountSketch(
            params.C_L_star,
            rows,
            derive_seed(self.master_seed, "hh", L),
            hash_degree=params.hh_hash_degree,
            sign_degree=params.hh_sign_degree,
            universe=n,
        )
        self.f2 = AmsSketch(groups, per_group, derive_seed(self.master_seed, "f2"), tau=params.f2_tau)
        self._levels = None

    # -- structure ---------------------------------------------------------

    @property
    def L(self) -> int:
        return self.params.L

    @property
    def code(self) -> ConstantWeightCode:
        if self._code is None:
            self._code = default_code(self.params.k, self.params.s, self.params.r)
        return self._code

    def structures(self) -> list[CountSketch]:
        """All counter arrays in a fixed order: HH_0, EST_0, ..., HH_L."""
        out = []
        for l in range(self.L):
            out += [self.hh[l], self.est[l]]
        return out + [self.hh_last]

    def level_words(self) -> list[int]:
        words = [self.hh[l].space_words + self.est[l].space_words for l in range(self.L)]
        return words + [self.hh_last.space_words]

    @property
    def space_words(self) -> int:
        """Counters held by the level structures; the F2 sketch is reported separately."""
        return sum(self.level_words())

    def universe_levels(self) -> np.ndarray:
        """Deepest level of every item ``0..n`` (index 0 unused)."""
        if self._levels is None:
            self._levels = self.level_hashes.level_of(np.arange(self.params.n + 1))
        return self._levels

    def level_of(self, items) -> np.ndarray:
        return self.universe_levels()[np.asarray(items, dtype=np.int64)]

    # -- updates -----------------------------------------------------------

    def _check_items(self, items: np.ndarray) -> None:
        if items.size and (items.min() < 1 or items.max() > self.params.n):
            raise ValueError(f"item ids must lie in 1..{self.params.n}")

    def update(self, item: int, delta: int) -> None:
        self.update_many([item], [delta])

    def update_many(self, items, deltas) -> None:
        items = np.atleast_1d(np.asarray(items, dtype=np.int64))
        deltas = np.atleast_1d(np.asarray(deltas, dtype=np.int64))
        if items.shape != deltas.shape:
            raise ValueError("items and deltas must have the same length")
        self._check_items(items)
        if items.size == 0:
            return
        # every structure is linear, so route the net change per item
        keys, inverse = np.unique(items, return_inverse=True)
        net = np.zeros(keys.size, dtype=np.int64)
        np.add.at(net, inverse, deltas)
        keys, net = keys[net != 0], net[net != 0]
        levels = self.level_of(keys)
        for l in range(self.L):
            mask = levels >= l
            self.hh[l].update_many(keys[mask], net[mask])
            self.est[l].update_many(keys[mask], net[mask])
        mask = levels == self.L
        self.hh_last.update_many(keys[mask], net[mask])
        self.f2.update_many(keys, net)

    def merge(self, other: GhssSketch) -> GhssSketch:
        if self.params != other.params or self.master_seed != other.master_seed:
            raise ValueError("can only merge sketches with identical parameters and seeds")
        merged = GhssSketch.__new__(GhssSketch)
        merged.__dict__.update(self.__dict__)
        merged.hh = [a.merge(b) for a, b in zip(self.hh, other.hh)]
        merged.est = [a.merge(b) for a, b in zip(self.est, other.est)]
        merged.hh_last = self.hh_last.merge(other.hh_last)
        merged.f2 = self.f2.merge(other.f2)
        return merged

    def is_zero(self) -> bool:
        return all(cs.is_zero() for cs in self.structures()) and self.f2.is_zero()

    def state_equal(self, other: GhssSketch) -> bool:
        return all(
            np.array_equal(a.counters, b.counters) for a, b in zip(self.structures(), other.structures())
        ) and np.array_equal(self.f2.accumulators, other.f2.accumulators)

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> bytes:
        """Versioned binary container: header JSON then every counter array."""
        header = json.dumps(
            {"params": self.params.to_dict(), "master_seed": self.master_seed}, sort_keys=True
        ).encode("utf-8")
        parts = [SNAPSHOT_MAGIC, struct.pack("<II", SNAPSHOT_VERSION, len(header)), header]
        parts += [cs.to_bytes() for cs in self.structures()]
        parts.append(self.f2.to_bytes())
        return b"".join(parts)

    @classmethod
    def from_snapshot(cls, data: bytes, **kwargs) -> GhssSketch:
        if data[:4] != SNAPSHOT_MAGIC:
            raise ValueError("not a GHSS snapshot")
        version, header_len = struct.unpack("<II", data[4:12])
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        header = json.loads(data[12 : 12 + header_len])
        sketch = cls(ParamSet.from_dict(header["params"]), header["master_seed"], **kwargs)
        offset = 12 + header_len
        for cs in sketch.structures():
            size = cs.space_words * 8
            cs.load_bytes(data[offset : offset + size])
            offset += size
        sketch.f2.load_bytes(data[offset:])
        return sketch

    # -- estimation --------------------------------------------------------

    def compute_thresholds(self, f2_hat: float | None = None) -> Thresholds:
        if f2_hat is None:
            f2_hat = self.f2.estimate_f2()
        return compute_thresholds_from(f2_hat, self.params)

    def level_estimates(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """``(items, f_hat)`` for every item routed to ``level``."""
        levels = self.universe_levels()
        items = np.flatnonzero(levels >= level)
        items = items[items >= 1]
        sketch = self.hh_last if level == self.L else self.hh[level]
        return items, sketch.point_estimates(items)

    def discover(self, thresholds: Thresholds, level_estimates=None) -> list[DiscoveryRecord]:
        if thresholds.degenerate:
            return []
        level_estimates = level_estimates or [self.level_estimates(l) for l in range(self.L + 1)]
        found: dict[int, DiscoveryRecord] = {}
        for l in range(self.L + 1):
            items, f_hat = level_estimates[l]
            hit = np.abs(f_hat) >= thresholds.Q[l]
            for i, f in zip(items[hit].tolist(), f_hat[hit].tolist()):
                if i not in found:
                    found[i] = DiscoveryRecord(i, l, int(f))
        return sorted(found.values(), key=lambda r: r.item)

    def top_candidates(self, level: int, level_estimates=None) -> np.ndarray:
        """The ``C_l`` items of ``S_l`` with largest ``|f_hat|``; ties go to smaller ids."""
        items, f_hat = level_estimates[level] if level_estimates else self.level_estimates(level)
        order = np.lexsort((items, -np.abs(f_hat)))
        return items[order[: self.params.C_l[level]]]

    def check_nocollision(self, level: int, topk) -> dict[int, np.ndarray] | None:
        """Rows of ``EST_level`` isolating each top item from the others, or None on failure."""
        topk = np.asarray(topk, dtype=np.int64)
        isolated = self.est[level].isolated_rows(topk)
        if topk.size and isolated.sum(axis=0).min() < self.params.s_tables:
            return None
        return {int(i): np.flatnonzero(isolated[:, c]) for c, i in enumerate(topk)}

    def _rows_outside_topk(self, level: int, item: int, topk: np.ndarray) -> np.ndarray:
        est = self.est[level]
        flat = est.buckets(topk) + (np.arange(est.rows, dtype=np.int64) * est.width)[:, None]
        occupancy = np.bincount(flat.ravel(), minlength=est.rows * est.width).reshape(est.rows, est.width)
        b = est.buckets([item])[:, 0]
        return np.flatnonzero(occupancy[np.arange(est.rows), b] == 0)

    def item_estimate(self, record: DiscoveryRecord, rows, perm_seed: int) -> float:
        """Averaged Taylor estimate of ``|f_i|**p`` from ``EST_{l_d}``."""
        if record.level >= self.L:
            raise ValueError("level-L items use |f_hat|**p directly")
        rows = np.sort(np.asarray(rows))
        if rows.size < self.params.s:
            raise ValueError(f"need at least s={self.params.s} isolated rows, got {rows.size}")
        rows = rows[: self.params.s]
        sign = 1 if record.f_hat > 0 else -1
        xs = self.est[record.level].row_reads([record.item])[rows, 0] * sign
        cfg = TaylorConfig(self.params.p, self.params.k)
        rng = np.random.default_rng(derive_seed(perm_seed, "perm", record.item))
        return averaged_tp_estimate(cfg, abs(record.f_hat), self.code, rng, xs.astype(np.float64))

    def estimate_fp(self, coin_seed: int = 0, perm_seed: int = 0) -> EstimateReport:
        p, L = self.params.p, self.L
        f2_hat = self.f2.estimate_f2()
        thresholds = self.compute_thresholds(f2_hat)
        report = EstimateReport(
            fp_hat=0.0,
            f2_hat=f2_hat,
            thresholds=thresholds,
            nocollision_ok=True,
            group_sizes=[0] * (L + 1),
            discovered=0,
            space_words=self.space_words,
            params_echo=self.params.to_dict(),
            scaled=self.params.scaled,
            f2_words=self.f2.space_words,
            seeds={"master": self.master_seed, "coin": coin_seed, "perm": perm_seed},
        )
        if thresholds.degenerate:
            return report

        estimates = [self.level_estimates(l) for l in range(L + 1)]
        discoveries = self.discover(thresholds, estimates)
        report.discovered = len(discoveries)

        isolation = {}
        topks = {}
        for l in range(L):
            topks[l] = self.top_candidates(l, estimates)
            rows = self.check_nocollision(l, topks[l])
            if rows is None:
                report.nocollision_ok = False
                report.failed_level = l
                return report
            isolation[l] = rows

        by_item = {rec.item: rec for rec in discoveries}
        terms = []
        for a in assign_groups(discoveries, thresholds, coin_seed, L):
            report.group_sizes[a.group] += 1
            rec = by_item[a.item]
            if rec.level == L:
                terms.append(2**L * abs(rec.f_hat) ** p)
                continue
            rows = isolation[rec.level].get(rec.item)
            if rows is None:
                report.smallhh_violations += 1
                rows = self._rows_outside_topk(rec.level, rec.item, topks[rec.level])
                if rows.size < self.params.s:
                    report.nocollision_ok = False
                    report.failed_level = rec.level
                    report.group_sizes = [0] * (L + 1)
                    return report
            terms.append(a.scale * self.item_estimate(rec, rows, perm_seed))
        # a sum of unbiased terms can dip below zero; F_p itself cannot
        report.fp_hat = max(0.0, math.fsum(terms))
        return report
