"""Stream generation, the exact oracle, and seeded trial orchestration."""

from __future__ import annotations

import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, TextIO

import numpy as np

from .ghss import GhssSketch
from .hashing import derive_seed, make_rng
from .params import ParamSet, derive_paper_params, derive_scaled_params


@dataclass(frozen=True)
class StreamSpec:
    """Recipe for a synthetic turnstile stream over items ``1..n``.

    ``distribution`` is ``"zipf"`` (exponent ``theta``), ``"uniform"`` or
    ``"planted"`` (exact final frequencies in ``planted``, item -> frequency).
    For zipf/uniform, ``m`` is the total record count including deletions;
    :func:`generate_stream` documents how deletions are placed.
    """

    n: int
    distribution: str = "zipf"
    m: int = 10_000
    theta: float = 1.2
    delete_fraction: float = 0.0
    max_value: int = 1
    planted: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("universe must be non-empty")
        if self.distribution not in ("zipf", "uniform", "planted"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.distribution == "planted" and not self.planted:
            raise ValueError("planted streams need target frequencies")
        if not 0 <= self.delete_fraction < 1:
            raise ValueError("delete_fraction must lie in [0, 1)")
        if self.max_value < 1 or self.m < 0:
            raise ValueError("max_value must be positive and m non-negative")

    def with_seed(self, seed: int) -> StreamSpec:
        return StreamSpec(**{**asdict(self), "seed": seed})


def _interleave(rng, items, deltas, deleted_idx):
    """Order inserts by position and put each deletion after its insert."""
    t_ins = np.arange(items.size, dtype=np.float64)
    t_del = rng.uniform(deleted_idx + 0.5, items.size)
    times = np.concatenate([t_ins, t_del])
    all_items = np.concatenate([items, items[deleted_idx]])
    all_deltas = np.concatenate([deltas, -deltas[deleted_idx]])
    order = np.argsort(times, kind="stable")
    return all_items[order], all_deltas[order]


def generate_stream(spec: StreamSpec) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic ``(items, deltas)`` arrays for ``spec``.

    Zipf/uniform: ``round(m / (1 + delete_fraction))`` inserted records with
    values in ``1..max_value``; a ``delete_fraction`` share of them is
    cancelled by a later record of opposite sign, so the total is ``m``
    records and final frequencies are a thinned copy of the target shape.

    Planted: each target frequency is written as chunks of at most
    ``max_value``, then ``delete_fraction`` worth of insert/delete churn
    pairs on random items is mixed in. Final frequencies equal the targets.
    """
    rng = make_rng(spec.seed, "stream")
    if spec.distribution == "planted":
        items, deltas = [], []
        for item, f in sorted(spec.planted.items()):
            item, f = int(item), int(f)
            if not 1 <= item <= spec.n:
                raise ValueError(f"planted item {item} outside 1..{spec.n}")
            sign, rest = (1 if f > 0 else -1), abs(f)
            while rest:
                v = min(rest, spec.max_value)
                items.append(item)
                deltas.append(sign * v)
                rest -= v
        n_churn = round(spec.delete_fraction * len(items))
        churn_items = rng.integers(1, spec.n + 1, size=n_churn)
        churn_vals = rng.integers(1, spec.max_value + 1, size=n_churn)
        items = np.concatenate([np.array(items, dtype=np.int64), churn_items])
        deltas = np.concatenate([np.array(deltas, dtype=np.int64), churn_vals])
        perm = rng.permutation(items.size)
        items, deltas = items[perm], deltas[perm]
        churn_pos = np.flatnonzero(perm >= items.size - n_churn)
        return _interleave(rng, items, deltas, churn_pos)

    m_ins = round(spec.m / (1 + spec.delete_fraction))
    n_del = spec.m - m_ins
    if spec.distribution == "zipf":
        weights = np.arange(1, spec.n + 1, dtype=np.float64) ** -spec.theta
    else:
        weights = np.ones(spec.n)
    ranks = rng.choice(spec.n, size=m_ins, p=weights / weights.sum())
    # heavy ranks land on random item ids
    rank_to_item = rng.permutation(spec.n) + 1
    items = rank_to_item[ranks].astype(np.int64)
    deltas = rng.integers(1, spec.max_value + 1, size=m_ins).astype(np.int64)
    deleted = np.sort(rng.choice(m_ins, size=n_del, replace=False)) if n_del else np.zeros(0, dtype=np.int64)
    return _interleave(rng, items, deltas, deleted)


def frequencies(items, deltas, n: int) -> np.ndarray:
    """Exact frequency vector; entry ``i - 1`` holds item ``i``."""
    f = np.zeros(n, dtype=np.int64)
    np.add.at(f, np.asarray(items, dtype=np.int64) - 1, np.asarray(deltas, dtype=np.int64))
    return f


def exact_moment(freqs, p: float) -> float:
    """``sum |f_i|**p`` with correctly rounded summation."""
    a = np.abs(np.asarray(freqs, dtype=np.float64))
    return math.fsum((a[a > 0] ** p).tolist())


def residual_f2(freqs, k: int) -> float:
    """Second moment left after removing the ``k`` largest ``|f_i|``."""
    sq = np.sort(np.asarray(freqs, dtype=np.float64) ** 2)[::-1]
    return math.fsum(sq[k:].tolist())


def check_moment_inequalities(freqs, p: float, q: float = 2.0, rtol: float = 1e-12) -> dict[str, bool]:
    """``F_q <= n^(1-q/p) F_p^(q/p)`` and ``F_{2p-2} <= F_p^(2-2/p)`` on the exact vector."""
    freqs = np.asarray(freqs)
    n = freqs.size
    fp = exact_moment(freqs, p)
    fq = exact_moment(freqs, q)
    f2p2 = exact_moment(freqs, 2 * p - 2)
    return {
        "power_mean": fq <= n ** (1 - q / p) * fp ** (q / p) * (1 + rtol),
        "f2p_minus_2": f2p2 <= fp ** (2 - 2 / p) * (1 + rtol),
    }


# -- stream files -----------------------------------------------------------


def write_stream(items, deltas, out: TextIO) -> None:
    for i, v in zip(np.asarray(items).tolist(), np.asarray(deltas).tolist()):
        out.write(f"{i}\t{v}\n")


def read_stream(lines: Iterable[str]) -> tuple[np.ndarray, np.ndarray]:
    items, deltas = [], []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            item, delta = line.split("\t")
            items.append(int(item))
            deltas.append(int(delta))
        except ValueError:
            raise ValueError(f"line {lineno}: expected 'item<TAB>delta', got {line!r}") from None
    return np.array(items, dtype=np.int64), np.array(deltas, dtype=np.int64)


def stream_to_text(items, deltas) -> str:
    buf = io.StringIO()
    write_stream(items, deltas, buf)
    return buf.getvalue()


# -- trials -------------------------------------------------------------------


@dataclass(frozen=True)
class TrialConfig:
    stream: StreamSpec
    p: float = 3.0
    epsilon: float = 0.2
    trials: int = 10
    seed: int = 0
    mode: str = "scaled"
    overrides: dict = field(default_factory=dict)
    vary_stream: bool = True

    def params(self) -> ParamSet:
        if self.mode == "paper":
            return derive_paper_params(self.stream.n, self.p, self.epsilon)
        if self.mode == "scaled":
            return derive_scaled_params(self.stream.n, self.p, self.epsilon, self.overrides or None)
        raise ValueError(f"unknown params mode {self.mode!r}")

    @classmethod
    def from_dict(cls, data: dict) -> TrialConfig:
        data = dict(data)
        stream = dict(data.pop("stream"))
        if stream.get("planted"):
            stream["planted"] = {int(k): int(v) for k, v in stream["planted"].items()}
        return cls(stream=StreamSpec(**stream), **data)


@dataclass(frozen=True)
class TrialOutcome:
    seed: int
    exact_fp: float
    fp_hat: float
    rel_error: float
    success: bool
    nocollision_ok: bool


@dataclass
class TrialReport:
    trials: int
    successes: int
    epsilon: float
    exact_fp: list[float]
    mean_fp_hat: float
    median_fp_hat: float
    rel_error_quantiles: dict[str, float]
    nocollision_failures: int
    space_words: int
    scaled: bool
    outcomes: list[TrialOutcome]
    wall_time: float = 0.0

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    def to_dict(self, timing: bool = True) -> dict:
        out = asdict(self)
        out["success_rate"] = self.success_rate
        if not timing:
            out.pop("wall_time")
        return out

    def to_json(self, timing: bool = True, **kwargs) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, **kwargs)


def run_one_trial(config: TrialConfig, index: int, params: ParamSet | None = None) -> tuple[TrialOutcome, int]:
    params = params or config.params()
    seed = config.seed + index
    spec = config.stream.with_seed(config.stream.seed + index) if config.vary_stream else config.stream
    items, deltas = generate_stream(spec)
    exact = exact_moment(frequencies(items, deltas, spec.n), config.p)
    sketch = GhssSketch(params, seed)
    sketch.update_many(items, deltas)
    coin = int(derive_seed(seed, "coin").generate_state(1)[0])
    perm = int(derive_seed(seed, "perm").generate_state(1)[0])
    report = sketch.estimate_fp(coin_seed=coin, perm_seed=perm)
    err = abs(report.fp_hat - exact)
    rel = err / exact if exact > 0 else (0.0 if err == 0 else math.inf)
    outcome = TrialOutcome(seed, exact, report.fp_hat, rel, err <= config.epsilon * exact, report.nocollision_ok)
    return outcome, sketch.space_words


def _trial_worker(args):
    config, index, params = args
    return run_one_trial(config, index, params)


def run_trials(config: TrialConfig, workers: int = 1) -> TrialReport:
    """Build, feed and query one sketch per seed and score it against the oracle."""
    start = time.perf_counter()
    if config.trials == 0:
        return TrialReport(0, 0, config.epsilon, [], 0.0, 0.0, {}, 0, 0, config.mode == "scaled", [], 0.0)
    params = config.params()
    jobs = [(config, i, params) for i in range(config.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_worker, jobs))
    else:
        results = [_trial_worker(job) for job in jobs]
    outcomes = [o for o, _ in results]
    fp_hats = np.array([o.fp_hat for o in outcomes])
    rel = np.array([o.rel_error for o in outcomes])
    quantiles = {f"{q:g}": float(np.quantile(rel, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)}
    return TrialReport(
        trials=config.trials,
        successes=sum(o.success for o in outcomes),
        epsilon=config.epsilon,
        exact_fp=[o.exact_fp for o in outcomes],
        mean_fp_hat=float(fp_hats.mean()),
        median_fp_hat=float(np.median(fp_hats)),
        rel_error_quantiles=quantiles,
        nocollision_failures=sum(not o.nocollision_ok for o in outcomes),
        space_words=results[0][1],
        scaled=params.scaled,
        outcomes=outcomes,
        wall_time=time.perf_counter() - start,
    )
