from __future__ import annotations

import itertools

import numpy as np
import pytest

from fpsketch.f2sketch import AmsSketch, ams_dimensions
from fpsketch.harness import StreamSpec, exact_moment, frequencies, generate_stream
from fpsketch.hashing import derive_seed


def test_dimensions_for_default_accuracy():
    groups, per_group = ams_dimensions(0.1, 0.25)
    assert (groups, per_group) == (13, 800)
    assert groups % 2 == 1
    with pytest.raises(ValueError):
        ams_dimensions(0.0, 0.25)


def test_insert_delete_is_zero():
    sk = AmsSketch(5, 7, derive_seed(0, "f2"))
    sk.update(9, 4)
    sk.update(9, -4)
    assert sk.is_zero()
    assert sk.estimate_f2() == 0.0


def test_single_item_squares_exactly():
    sk = AmsSketch(5, 7, derive_seed(1, "f2"), tau=0.2)
    sk.update(3, 5)
    assert set(np.abs(sk.accumulators).ravel().tolist()) == {5}
    assert sk.raw_estimate() == 25.0
    assert sk.estimate_f2() == pytest.approx(25 / 0.8)


def test_two_item_squares_take_the_enumerated_values():
    # sign pairs (s1, s2) in {-1, 1}^2 give (3 s1 + 4 s2)^2 in {1, 49}, mean 25
    enumerated = {(3 * a + 4 * b) ** 2 for a, b in itertools.product((-1, 1), repeat=2)}
    assert enumerated == {1, 49}
    sk = AmsSketch(1, 4000, derive_seed(2, "f2"))
    sk.update_many([10, 20], [3, 4])
    squares = sk.accumulators.astype(float) ** 2
    assert set(np.unique(squares).tolist()) <= enumerated


def test_raw_estimator_is_unbiased():
    f = {1: 3, 2: -4, 7: 2, 11: 1}
    exact = sum(v * v for v in f.values())
    # one group of independent accumulators is a sample over 10**4 seeds
    sk = AmsSketch(1, 10**4, derive_seed(3, "f2"))
    sk.update_many(list(f), list(f.values()))
    squares = sk.accumulators.astype(float).ravel() ** 2
    se = squares.std(ddof=1) / np.sqrt(squares.size)
    assert abs(squares.mean() - exact) <= 3 * se


@pytest.mark.slow
def test_zipf_relative_accuracy_and_one_sidedness():
    tau = 0.1
    within, above = 0, 0
    for seed in range(100):
        items, deltas = generate_stream(StreamSpec(n=4096, m=1000, theta=1.1, seed=seed))
        exact = exact_moment(frequencies(items, deltas, 4096), 2)
        sk = AmsSketch.for_accuracy(tau, 0.25, derive_seed(seed, "f2"))
        sk.update_many(items, deltas)
        ratio = sk.estimate_f2() / exact
        within += 1 - tau <= ratio <= 1 + 2 * tau
        above += ratio >= 1
    assert within >= 90
    assert above >= 90


def test_merge_and_snapshot():
    rng = np.random.default_rng(0)
    items = rng.integers(1, 100, size=500)
    deltas = rng.integers(-3, 4, size=500)
    whole, a, b = (AmsSketch(3, 5, derive_seed(4, "f2")) for _ in range(3))
    whole.update_many(items, deltas)
    a.update_many(items[:250], deltas[:250])
    b.update_many(items[250:], deltas[250:])
    assert np.array_equal(a.merge(b).accumulators, whole.accumulators)
    with pytest.raises(ValueError):
        a.merge(AmsSketch(3, 5, derive_seed(5, "f2")))
    fresh = AmsSketch(3, 5, derive_seed(4, "f2"))
    fresh.load_bytes(whole.to_bytes())
    assert np.array_equal(fresh.accumulators, whole.accumulators)
    assert whole.space_words == 15
