"""Taylor polynomial estimation of ``mu**p`` from unbiased samples of ``mu``.

Given an estimate ``lam`` of ``mu`` and independent samples ``X_1..X_k`` with
mean ``mu``, the degree-``k`` Taylor expansion of ``t**p`` around ``lam`` is
evaluated with every power ``(mu - lam)**j`` replaced by the product
``(X_1 - lam) ... (X_j - lam)``. For integral ``p < k + 1`` the result is
exactly unbiased.

The averaged form draws the ``k`` samples for each term from the support of
one codeword of a constant-weight code over ``s = 8k`` samples, in a random
order per codeword, and averages over codewords; low pairwise overlap of the
codewords is what cuts the variance by a factor of order ``k``.

All estimators broadcast over leading batch dimensions so Monte-Carlo
checks can run as array operations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np


def falling_factorial(a: float, m: int) -> float:
    """``a (a-1) ... (a-m+1)``; the empty product for ``m == 0`` is 1."""
    if m < 0:
        raise ValueError("m must be non-negative")
    out = 1.0
    for i in range(m):
        out *= a - i
    return out


def gen_binomial(p: float, j: int) -> float:
    """Generalised binomial ``<p>_j / j!``, zero for negative ``j``."""
    if j < 0:
        return 0.0
    out = 1.0
    for i in range(j):
        out *= (p - i) / (i + 1)
    return out


@dataclass(frozen=True)
class TaylorConfig:
    p: float
    k: int

    def __post_init__(self):
        if not self.k + 1 > self.p:
            raise ValueError(f"Taylor degree k={self.k} needs k + 1 > p = {self.p}")

    def gammas(self, lam) -> np.ndarray:
        """``binom(p, j) * lam**(p - j)`` for ``j = 0..k``, stacked on the last axis.

        Uses ``gamma_{j+1} = gamma_j * (p - j) / ((j + 1) * lam)`` rather than
        recomputing falling factorials.
        """
        lam = np.asarray(lam, dtype=np.float64)
        out = np.empty(lam.shape + (self.k + 1,))
        g = lam**self.p
        for j in range(self.k + 1):
            out[..., j] = g
            g = g * ((self.p - j) / ((j + 1) * lam))
        return out


def _check_lambda(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(~(lam > 0)):
        raise ValueError("lambda must be positive")
    return lam


def tp_estimate(cfg: TaylorConfig, lam, xs) -> np.ndarray | float:
    """Single Taylor polynomial estimate from the last-axis samples ``xs``."""
    lam = _check_lambda(lam)
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape[-1] != cfg.k:
        raise ValueError(f"need exactly k={cfg.k} samples, got {xs.shape[-1]}")
    gam = cfg.gammas(lam)
    diffs = xs - lam[..., None]
    total = gam[..., 0] * np.ones(diffs.shape[:-1])
    prod = np.ones(diffs.shape[:-1])
    for j in range(cfg.k):
        prod = prod * diffs[..., j]
        total = total + gam[..., j + 1] * prod
    return total if total.ndim else float(total)


@dataclass(frozen=True)
class ConstantWeightCode:
    """``r`` weight-``k`` words of length ``s`` stored as sorted index rows."""

    block_length: int
    weight: int
    codewords: np.ndarray

    @property
    def min_distance(self) -> int:
        return math.ceil(3 * self.weight / 2)

    @property
    def size(self) -> int:
        return len(self.codewords)

    def as_matrix(self) -> np.ndarray:
        m = np.zeros((self.size, self.block_length), dtype=np.int64)
        np.put_along_axis(m, self.codewords, 1, axis=1)
        return m

    def pairwise_distances(self) -> np.ndarray:
        m = self.as_matrix()
        overlap = m @ m.T
        return 2 * self.weight - 2 * overlap

    def to_json(self) -> str:
        return json.dumps([[int(i) for i in row] for row in self.codewords])

    @classmethod
    def from_json(cls, text: str, block_length: int) -> ConstantWeightCode:
        rows = np.array(json.loads(text), dtype=np.int64)
        return cls(block_length, rows.shape[1], rows)


class CodeConstructionError(RuntimeError):
    pass


def max_shared_support(k: int) -> int:
    """Largest overlap two weight-``k`` words may have at distance ``ceil(3k/2)``."""
    return (2 * k - math.ceil(3 * k / 2)) // 2


def build_code(k: int, s: int, r: int, seed, max_attempts: int | None = None) -> ConstantWeightCode:
    """Randomised greedy constant-weight code.

    Draws uniform weight-``k`` words and keeps each one whose support shares
    at most :func:`max_shared_support` indices with every word kept so far.
    """
    if k < 2:
        raise ValueError("weight must be at least 2")
    if s != 8 * k:
        raise ValueError(f"block length must be 8k = {8 * k}, got {s}")
    if r < 1:
        raise ValueError("need at least one codeword")
    rng = np.random.default_rng(seed)
    limit = max_shared_support(k)
    budget = max_attempts if max_attempts is not None else 2000 * r + 10_000
    kept = np.zeros((r, s), dtype=np.int32)
    words = []
    attempts = 0
    while len(words) < r:
        if attempts >= budget:
            raise CodeConstructionError(
                f"found only {len(words)} of {r} codewords after {attempts} draws; lower r or raise k"
            )
        batch = min(512, budget - attempts)
        attempts += batch
        cands = np.argsort(rng.random((batch, s)), axis=1)[:, :k]
        onehot = np.zeros((batch, s), dtype=np.int32)
        np.put_along_axis(onehot, cands, 1, axis=1)
        overlap_old = onehot @ kept[: len(words)].T if words else np.zeros((batch, 0), dtype=np.int32)
        ok = np.all(overlap_old <= limit, axis=1)
        start = len(words)
        for b in np.flatnonzero(ok):
            fresh = kept[start : len(words)]
            if len(fresh) and np.any(fresh @ onehot[b] > limit):
                continue
            kept[len(words)] = onehot[b]
            words.append(np.sort(cands[b]))
            if len(words) == r:
                break
    return ConstantWeightCode(s, k, np.array(words, dtype=np.int64))


def draw_permutations(rng: np.random.Generator, shape: tuple[int, ...], k: int) -> np.ndarray:
    """Independent uniform permutations of ``range(k)``, one per leading index."""
    base = np.broadcast_to(np.arange(k), shape + (k,))
    return rng.permuted(base, axis=-1)


def averaged_tp_estimate(
    cfg: TaylorConfig,
    lam,
    code: ConstantWeightCode,
    perm_seed,
    xs,
    permutations: np.ndarray | None = None,
) -> np.ndarray | float:
    """Mean over codewords of the Taylor estimate on that word's samples.

    ``xs`` has ``code.block_length`` samples on its last axis. Each codeword
    reads its ``k`` indices in an order given by a fresh permutation drawn from
    ``perm_seed`` (or taken from ``permutations``, shape ``(..., r, k)``).
    """
    lam = _check_lambda(lam)
    xs = np.asarray(xs, dtype=np.float64)
    if xs.shape[-1] != code.block_length:
        raise ValueError(f"need {code.block_length} samples, got {xs.shape[-1]}")
    if code.weight != cfg.k:
        raise ValueError("code weight must equal the Taylor degree")
    batch = xs.shape[:-1]
    if permutations is None:
        permutations = draw_permutations(np.random.default_rng(perm_seed), batch + (code.size,), cfg.k)
    order = np.take_along_axis(np.broadcast_to(code.codewords, permutations.shape), permutations, axis=-1)
    flat_xs = xs.reshape(-1, code.block_length)
    flat_order = order.reshape(flat_xs.shape[0], code.size, cfg.k)
    picked = flat_xs[np.arange(flat_xs.shape[0])[:, None, None], flat_order]
    picked = picked.reshape(batch + (code.size, cfg.k))
    per_word = tp_estimate(cfg, np.broadcast_to(lam[..., None], batch + (code.size,)), picked)
    out = np.mean(per_word, axis=-1)
    return out if out.ndim else float(out)
