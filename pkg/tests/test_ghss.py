from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from fpsketch.countsketch import CountSketch
from fpsketch.ghss import (
    DiscoveryRecord,
    GhssSketch,
    SketchTooLarge,
    Thresholds,
    assign_groups,
    coin_flip,
    compute_thresholds_from,
)
from fpsketch.harness import StreamSpec, exact_moment, frequencies, generate_stream
from fpsketch.hashing import derive_seed
from fpsketch.params import derive_paper_params, derive_scaled_params

N = 1024
SMALL = derive_scaled_params(N, 3, 0.5, {"bucket_factor": 2})


def zipf_stream(seed, m=3000):
    return generate_stream(StreamSpec(n=N, m=m, theta=1.2, delete_fraction=0.2, seed=seed))


def item_at_level(sk, level, exact=True):
    levels = sk.universe_levels()
    hits = np.flatnonzero(levels == level) if exact else np.flatnonzero(levels >= level)
    return int(hits[hits >= 1][0])


@pytest.fixture(scope="module")
def loaded():
    items, deltas = zipf_stream(0)
    sk = GhssSketch(SMALL, 7)
    sk.update_many(items, deltas)
    return sk, items, deltas


def test_small_config_has_two_levels():
    assert SMALL.L == 2 and SMALL.level_width(0) == 2 * SMALL.C_l[0]


def test_space_words_matches_recount():
    sk = GhssSketch(SMALL, 1)
    p = SMALL
    recount = sum(p.bucket_factor * p.C_l[l] * (p.s_tables + 2 * p.s_tables) for l in range(p.L))
    recount += p.C_L_star * p.s_tables
    assert sk.space_words == recount
    assert [cs.rows for cs in sk.structures()] == [p.s_tables, 2 * p.s_tables] * p.L + [p.s_tables]


def test_doubling_table_rows_doubles_space():
    a = derive_scaled_params(N, 3, 0.5, {"bucket_factor": 2})
    b = derive_scaled_params(N, 3, 0.5, {"bucket_factor": 2, "s_tables": 2 * a.s_tables})
    assert GhssSketch(b, 0).space_words == 2 * GhssSketch(a, 0).space_words


def test_clamped_single_level_structure():
    ps = derive_scaled_params(4096, 3, 0.2)
    assert ps.L == 1
    sk = GhssSketch(ps, 0)
    assert len(sk.hh) == len(sk.est) == 1
    assert sk.hh_last.width == ps.C_L_star


def test_paper_params_refuse_to_allocate():
    with pytest.raises(SketchTooLarge):
        GhssSketch(derive_paper_params(4096, 3, 0.5), 0)


def test_same_seed_same_state():
    items, deltas = zipf_stream(1, m=500)
    a, b = GhssSketch(SMALL, 3), GhssSketch(SMALL, 3)
    a.update_many(items, deltas)
    b.update_many(items, deltas)
    assert a.snapshot() == b.snapshot()


def test_rejects_items_outside_universe():
    sk = GhssSketch(SMALL, 0)
    for bad in (0, N + 1):
        with pytest.raises(ValueError):
            sk.update(bad, 1)


def test_update_routes_by_level():
    sk = GhssSketch(SMALL, 2)
    i0 = item_at_level(sk, 0)
    sk.update(i0, 9)
    assert not sk.hh[0].is_zero() and not sk.est[0].is_zero()
    assert all(cs.is_zero() for cs in [sk.hh[1], sk.est[1], sk.hh_last])
    assert not sk.f2.is_zero()

    sk = GhssSketch(SMALL, 2)
    top = item_at_level(sk, SMALL.L)
    sk.update(top, 4)
    assert not any(cs.is_zero() for cs in sk.structures())


def test_insert_delete_returns_to_zero():
    items, deltas = zipf_stream(2, m=2000)
    sk = GhssSketch(SMALL, 5)
    sk.update_many(items, deltas)
    sk.update_many(items, -deltas)
    assert sk.is_zero()


def test_update_order_does_not_matter():
    items, deltas = zipf_stream(3, m=2000)
    a, b = GhssSketch(SMALL, 5), GhssSketch(SMALL, 5)
    a.update_many(items, deltas)
    order = np.random.default_rng(0).permutation(items.size)
    for chunk in np.array_split(order, 7):
        b.update_many(items[chunk], deltas[chunk])
    assert a.state_equal(b)


def test_shard_and_merge_equals_whole():
    items, deltas = zipf_stream(4, m=2000)
    whole = GhssSketch(SMALL, 6)
    whole.update_many(items, deltas)
    shards = [GhssSketch(SMALL, 6) for _ in range(3)]
    for sk, idx in zip(shards, np.array_split(np.arange(items.size), 3)):
        sk.update_many(items[idx], deltas[idx])
    merged = shards[0].merge(shards[1]).merge(shards[2])
    assert merged.state_equal(whole)
    with pytest.raises(ValueError):
        whole.merge(GhssSketch(SMALL, 7))


def test_snapshot_round_trip(loaded):
    sk, _, _ = loaded
    blob = sk.snapshot()
    assert blob[:4] == b"GHSS"
    back = GhssSketch.from_snapshot(blob)
    assert back.state_equal(sk) and back.params == sk.params
    assert back.estimate_fp(1, 2).fp_hat == sk.estimate_fp(1, 2).fp_hat
    with pytest.raises(ValueError):
        GhssSketch.from_snapshot(b"XXXX" + blob[4:])


def test_threshold_formulas():
    ps = dataclasses.replace(SMALL, B=64)
    th = compute_thresholds_from(1024.0, ps)
    assert th.T[0] == 4.0
    assert th.T[1] == pytest.approx(4.0 / math.sqrt(2 * ps.alpha), rel=1e-15)
    assert th.Q[:-1] == tuple((1 - ps.epsbar) * t for t in th.T)
    assert th.Q[-1] == 0.5


def test_threshold_ratio_for_p_four():
    ps = derive_scaled_params(1 << 14, 4, 0.5, {"b_constant": 0.05, "c_ratio": 2.0})
    assert ps.alpha == pytest.approx(0.995)
    th = compute_thresholds_from(5000.0, ps)
    assert th.T[1] == pytest.approx(th.T[0] / math.sqrt(1.99), rel=1e-14)


def test_empty_sketch_estimates_zero():
    sk = GhssSketch(SMALL, 0)
    th = sk.compute_thresholds()
    assert th.degenerate and th.Q[-1] == 0.5
    assert sk.discover(th) == []
    rep = sk.estimate_fp()
    assert rep.fp_hat == 0.0 and rep.nocollision_ok


def test_heavy_item_discovered_at_level_zero():
    sk = GhssSketch(SMALL, 1)
    items, deltas = zipf_stream(5, m=1000)
    f = frequencies(items, deltas, N)
    heavy = int(np.argmin(f)) + 1
    sk.update_many(items, deltas)
    sk.update(heavy, 5000)
    found = {r.item: r for r in sk.discover(sk.compute_thresholds())}
    rec = found[heavy]
    assert rec.level == 0
    assert abs(rec.f_hat - (f[heavy - 1] + 5000)) <= 50


def test_cancelled_item_at_last_level_is_not_discovered():
    sk = GhssSketch(SMALL, 3)
    top = item_at_level(sk, SMALL.L)
    others = [i for i in (1, 2, 3, 4) if i != top][:3]
    sk.update_many([top] + others, [20, 4, 5, 6])
    sk.update(top, -20)
    found = {r.item for r in sk.discover(sk.compute_thresholds())}
    assert top not in found


def test_last_level_survivors_are_exact():
    sk = GhssSketch(SMALL, 4)
    deep = np.flatnonzero(sk.universe_levels() == SMALL.L)
    deep = deep[deep >= 1]
    assert 0 < deep.size <= SMALL.C_L_star // 2
    rng = np.random.default_rng(0)
    f = rng.integers(-30, 31, size=deep.size)
    sk.update_many(deep, f)
    assert np.array_equal(sk.hh_last.point_estimates(deep), f)
    records = {r.item: r for r in sk.discover(sk.compute_thresholds())}
    for i, v in zip(deep.tolist(), f.tolist()):
        if v:
            assert records[i].f_hat == v


def test_topk_ties_prefer_small_ids(loaded):
    sk, _, _ = loaded
    items, f_hat = sk.level_estimates(0)
    top = sk.top_candidates(0)
    assert top.size == min(SMALL.C_l[0], items.size)
    key = {int(i): (-abs(int(v)), int(i)) for i, v in zip(items, f_hat)}
    assert [key[int(i)] for i in top] == sorted(key[int(i)] for i in top)


def test_nocollision_singleton_gets_all_rows():
    sk = GhssSketch(SMALL, 0)
    rows = sk.check_nocollision(0, [5])
    assert rows[5].tolist() == list(range(2 * SMALL.s_tables))


def test_nocollision_fails_with_forced_collisions():
    sk = GhssSketch(SMALL, 0)
    sk.est[0] = CountSketch(1, 2 * SMALL.s_tables, derive_seed(0, "narrow"))
    assert sk.check_nocollision(0, [5, 6]) is None
    sk.update_many([5, 6], [10, 12])
    rep = sk.estimate_fp(0, 0)
    assert not rep.nocollision_ok and rep.fp_hat == 0.0 and rep.failed_level == 0


def test_nocollision_success_rate_at_default_widths():
    ps = derive_scaled_params(4096, 3, 0.2)
    ok = 0
    rng = np.random.default_rng(1)
    for seed in range(100):
        est = CountSketch(ps.level_width(0), 2 * ps.s_tables, derive_seed(seed, "est"), hash_degree=ps.t, sign_degree=4)
        members = rng.choice(np.arange(1, 4097), size=64, replace=False)
        ok += est.isolated_rows(members).sum(axis=0).min() >= ps.s_tables
    assert ok >= 99


def test_group_rules():
    th = Thresholds(T=(10.0, 7.0), Q=(6.0, 4.0, 0.5))
    heads = next(i for i in range(1, 100) if coin_flip(3, i) == 1)
    tails = next(i for i in range(1, 100) if coin_flip(3, i) == 0)
    recs = [
        DiscoveryRecord(1000, 0, -12),
        DiscoveryRecord(heads, 0, 8),
        DiscoveryRecord(tails, 1, 5),
        DiscoveryRecord(2000, 2, 1),
    ]
    got = {a.item: a.group for a in assign_groups(recs, th, 3, 2)}
    assert got == {1000: 0, heads: 1, 2000: 2}
    assert {a.item: a.scale for a in assign_groups(recs, th, 3, 2)}[2000] == 4


def test_coin_is_fair():
    flips = np.array([coin_flip(17, i) for i in range(1, 10**4 + 1)])
    assert abs(flips.mean() - 0.5) <= 3 * math.sqrt(0.25 / 10**4)
    assert coin_flip(17, 5) == coin_flip(17, 5)


def test_groups_are_consistent_with_discovery(loaded):
    sk, _, _ = loaded
    th = sk.compute_thresholds()
    recs = sk.discover(th)
    levels = {r.item: r.level for r in recs}
    assigned = assign_groups(recs, th, 11, SMALL.L)
    assert len({a.item for a in assigned}) == len(assigned)
    for a in assigned:
        assert a.group in (levels[a.item], levels[a.item] + 1)
        assert a.group <= SMALL.L
    for r in recs:
        if r.level < SMALL.L:
            assert abs(r.f_hat) >= th.Q[r.level]


def test_single_item_estimate_is_exact():
    sk = GhssSketch(SMALL, 9)
    item = item_at_level(sk, 0)
    sk.update(item, -10)
    rec = DiscoveryRecord(item, 0, sk.hh[0].point_estimate(item))
    assert rec.f_hat == -10
    rows = sk.check_nocollision(0, [item])[item]
    assert sk.item_estimate(rec, rows, 4) == pytest.approx(1000.0, rel=1e-12)
    with pytest.raises(ValueError):
        sk.item_estimate(rec, rows[:10], 4)


def test_single_item_end_to_end():
    hits = 0
    for seed in range(10):
        sk = GhssSketch(SMALL, seed)
        sk.update(7, 10)
        rep = sk.estimate_fp(seed, seed + 1)
        hits += abs(rep.fp_hat - 1000) <= 0.5 * 1000
    assert hits >= 9


def test_estimation_is_read_only_and_repeatable(loaded):
    sk, _, _ = loaded
    before = sk.snapshot()
    a = sk.estimate_fp(3, 4)
    b = sk.estimate_fp(3, 4)
    assert a.to_json() == b.to_json()
    assert sk.snapshot() == before
    assert a.fp_hat >= 0 and a.scaled
    assert a.space_words == sk.space_words and a.params_echo["L"] == SMALL.L


def test_discovery_level_does_not_rise_with_frequency():
    base_items, base_deltas = zipf_stream(8, m=1500)
    sk0 = GhssSketch(SMALL, 12)
    target = item_at_level(sk0, SMALL.L)
    extra = base_items != target
    base_items, base_deltas = base_items[extra], base_deltas[extra]
    seen = []
    for f in (1, 3, 10, 30, 100, 300):
        sk = GhssSketch(SMALL, 12)
        sk.update_many(base_items, base_deltas)
        sk.update(target, f)
        recs = {r.item: r.level for r in sk.discover(sk.compute_thresholds())}
        seen.append(recs.get(target, SMALL.L + 1))
    assert seen == sorted(seen, reverse=True)
    assert seen[-1] == 0


@pytest.fixture(scope="module")
def planted_runs():
    rng = np.random.default_rng(5)
    background = {int(i): int(v) for i, v in zip(rng.choice(np.arange(2, N + 1), 300, replace=False), rng.integers(-6, 7, 300))}
    planted = {**background, 1: 40}
    items, deltas = generate_stream(StreamSpec(n=N, distribution="planted", planted=planted, max_value=5, seed=1))
    exact = exact_moment(frequencies(items, deltas, N), 3)
    thetas, fps = [], []
    for seed in range(200):
        sk = GhssSketch(SMALL, seed)
        sk.update_many(items, deltas)
        th = sk.compute_thresholds()
        rec = next(r for r in sk.discover(th) if r.item == 1)
        if rec.level < SMALL.L:
            rows = sk.check_nocollision(rec.level, sk.top_candidates(rec.level))
            if rows is not None:
                thetas.append(sk.item_estimate(rec, rows[1], seed))
        fps.append(sk.estimate_fp(seed, seed).fp_hat)
    return exact, np.array(thetas), np.array(fps)


@pytest.mark.slow
def test_item_estimate_unbiased_for_planted_heavy(planted_runs):
    _, thetas, _ = planted_runs
    assert thetas.size >= 180
    se = thetas.std(ddof=1) / math.sqrt(thetas.size)
    assert abs(thetas.mean() - 40**3) <= 3 * se + 1e-9 * 40**3


@pytest.mark.slow
def test_fp_mean_unbiased_for_planted_heavy(planted_runs):
    exact, _, fps = planted_runs
    se = fps.std(ddof=1) / math.sqrt(fps.size)
    assert abs(fps.mean() - exact) <= 3 * se
