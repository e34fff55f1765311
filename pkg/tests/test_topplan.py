import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pctpack.env import EnvConfig, PackingEnv, item_mass
from pctpack.geometry import BinSpec, Vec3
from pctpack.heuristics import dbl
from pctpack.policy import Descriptor, Policy, act
from pctpack.topplan import (OperandSet, PathCache, Planner, PlannerConfig, PolicySource, RuleSource, above_any,
                             below_any, execute_path, mcts_sample_orders, plan, plan_offline, run_variant,
                             state_digest)
from pctpack.tree import ItemSpec, PackingTree


def packed_env(seed, steps=5):
    env = PackingEnv(EnvConfig(), seed)
    rng = np.random.default_rng(seed)
    while env.t < steps and not env.done:
        env.step(int(rng.integers(len(env.leaves))))
    return env


def test_single_budget_is_arrival_order():
    assert mcts_sample_orders(5, 1, np.random.default_rng(0)) == [(0, 1, 2, 3, 4)]


def test_two_items_give_both_orders():
    assert mcts_sample_orders(2, 2) == [(0, 1), (1, 0)]
    assert mcts_sample_orders(2, 64) == [(0, 1), (1, 0)]


def test_exhaustive_when_budget_allows():
    orders = mcts_sample_orders(4, 24)
    assert orders[0] == (0, 1, 2, 3)
    assert sorted(orders) == sorted(itertools.permutations(range(4)))


def test_sampled_orders_are_distinct_over_many_draws():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        orders = mcts_sample_orders(6, 16, rng)
        assert len(orders) == 16 == len(set(orders))
        assert orders[0] == tuple(range(6))
        assert all(sorted(o) == list(range(6)) for o in orders)


def test_bad_budget():
    with pytest.raises(ValueError):
        mcts_sample_orders(3, 0)
    with pytest.raises(ValueError):
        PlannerConfig(m=0)
    with pytest.raises(ValueError):
        PlannerConfig(value="oracle")


def test_regimes():
    it = ItemSpec(Vec3(1, 1, 1))
    assert OperandSet([it]).regime == "online"
    assert OperandSet([it], [it]).regime == "lookahead"
    assert OperandSet([it, it]).regime == "buffering"
    assert OperandSet([it, it], [], unknown_present=False).regime == "offline"


@pytest.mark.parametrize("seed", range(8))
def test_online_reduction_is_policy_argmax(seed):
    env = packed_env(seed)
    pol = Policy.create(Descriptor(), seed)
    got = plan(env.tree, OperandSet([env.item]), PolicySource(pol), m=64)
    assert got[0] == 0
    assert env.leaves.index_of(got[1]) == act(env, pol)


def brute_offline(tree, items):
    best = None
    for order in itertools.permutations(range(len(items))):
        t = tree.clone()
        vol = 0.0
        for i in order:
            leaves = t.candidates_for(items[i])
            if len(leaves):
                t.insert(items[i], leaves[dbl(t, leaves)])
                vol += items[i].volume
        if best is None or vol > best[0]:
            best = (vol, order)
    return best


def test_offline_two_items_against_brute_force():
    tree = PackingTree(BinSpec(Vec3(4, 5, 3)))
    items = [ItemSpec(Vec3(2, 3, 4)), ItemSpec(Vec3(4, 5, 3))]  # volumes 24 and 60
    path = plan_offline(tree, items, RuleSource("DBL"), PlannerConfig(m=64))
    vol, order = brute_offline(tree, items)
    assert vol == 60 and order == (1, 0)
    assert path.placed_volume == 60 and path.order == (1, 0)
    assert path.frontier_value == 0.0
    assert path.nodes[1].leaf is None


@given(st.integers(0, 2**31 - 1))
def test_offline_exhaustive_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    tree = PackingTree(BinSpec(Vec3(6, 6, 6)))
    items = [ItemSpec(Vec3(*(int(v) for v in rng.integers(1, 6, 3)))) for _ in range(4)]
    path = plan_offline(tree, items, RuleSource("DBL"), PlannerConfig(m=24, full_depth=True))
    assert path.placed_volume == brute_offline(tree, items)[0]


def test_offline_plan_is_idempotent():
    env = packed_env(3, 10)
    rng = np.random.default_rng(0)
    items = [ItemSpec(Vec3(*(int(v) for v in rng.integers(1, 6, 3)))) for _ in range(4)]
    cfg = PlannerConfig(m=24, full_depth=True)
    first = plan_offline(env.tree, items, RuleSource("DBL"), cfg)
    again = plan_offline(env.tree, items, RuleSource("DBL"), cfg)
    assert first == again
    for k in range(len(first.nodes)):
        t = env.tree.clone()
        for n in first.nodes[:k]:
            if n.leaf is not None:
                t.insert(items[n.item], n.leaf)
        rest = [items[n.item] for n in first.nodes[k:]]
        replanned = plan_offline(t, rest, RuleSource("DBL"), cfg)
        want = sum(items[n.item].volume for n in first.nodes[k:] if n.leaf is not None)
        assert replanned.placed_volume == want
    done = execute_path(env.tree.clone(), items, first)
    left = [items[n.item] for n in first.nodes if n.leaf is None]
    if left:
        assert plan_offline(done, left, RuleSource("DBL"), cfg).placed_volume == 0


def test_second_plan_is_served_from_cache():
    env = packed_env(1)
    items = env.peek(3)
    ops = OperandSet(items[:2], items[2:])
    planner = Planner(RuleSource("DBL"), PlannerConfig(m=64))
    first = planner.plan(env.tree, ops, 0.01, np.random.default_rng(0))
    fresh = planner.fresh_paths, planner.fresh_nodes
    second = planner.plan(env.tree, ops, 0.01, np.random.default_rng(0))
    assert first == second
    assert (planner.fresh_paths, planner.fresh_nodes) == fresh
    assert planner.cache.hit_rate > 0


def test_digest_tracks_mutation():
    env = packed_env(2)
    before = state_digest(env.tree)
    clone = env.tree.clone()
    assert state_digest(clone) == before
    env.step(0)
    assert state_digest(env.tree) != before


def test_cache_eviction_is_lru():
    c = PathCache(2)
    c.store("a", 1)
    c.store("b", 2)
    assert c.lookup("a") == 1
    c.store("c", 3)
    assert c.lookup("b") is None and c.lookup("a") == 1 and len(c) == 2


@pytest.mark.parametrize("seed", range(5))
def test_cached_and_uncached_agree(seed):
    cfg = EnvConfig()
    a = run_variant(cfg, 2, 1, RuleSource("DBL"), PlannerConfig(m=16), seed=seed, max_items=15)
    b = run_variant(cfg, 2, 1, RuleSource("DBL"), PlannerConfig(m=16, use_cache=False), seed=seed, max_items=15)
    assert a.actions == b.actions
    assert b.hit_rate == 0


def test_masks():
    prev = np.array([0, 0, 0, 2, 2, 2.0])
    boxes = np.array([[0, 0, 2, 1, 1, 3], [2, 0, 2, 3, 1, 3], [1, 1, 0, 3, 3, 1.0]])
    assert list(above_any(boxes, [prev], 0.0)) == [True, False, False]
    cover = np.array([0, 0, 5, 1.5, 4, 6.0])
    assert list(below_any(boxes, [cover], 0.0)) == [True, False, True]


@pytest.mark.parametrize("seed", range(3))
def test_lookahead_never_covers_previewed(seed):
    res = run_variant(EnvConfig(), 1, 2, RuleSource("DBL"), PlannerConfig(m=8), seed=seed)
    assert res.violations == 0
    assert res.utilization > 0.3


def test_buffering_beats_pick_first():
    cfg = EnvConfig()
    src = RuleSource("DBL")
    seeds = range(50)
    buffered = [run_variant(cfg, 3, 0, src, seed=s).utilization for s in seeds]
    first = [run_variant(cfg, 1, 0, src, seed=s).utilization for s in seeds]
    assert np.mean(buffered) >= np.mean(first)


def test_critic_value_source():
    env = packed_env(0)
    pol = Policy.create(Descriptor(), 0)
    items = env.peek(2)
    got = plan(env.tree, OperandSet(items), PolicySource(pol), m=4, value="critic")
    assert got is not None
    with pytest.raises(ValueError):
        plan(env.tree, OperandSet(items[:1] * 2), RuleSource("DBL"), m=4, value="critic")


def test_terminal_when_nothing_fits():
    tree = PackingTree(BinSpec(Vec3(2, 2, 2)))
    assert plan(tree, OperandSet([ItemSpec(Vec3(3, 3, 3))]), RuleSource("DBL")) is None
    with pytest.raises(ValueError):
        Planner(RuleSource()).paths(tree, OperandSet([]), 1.0)


def test_path_placements_are_mutually_feasible():
    env = packed_env(5, 8)
    items = env.peek(4)
    planner = Planner(RuleSource("LSAH"), PlannerConfig(m=24))
    for path in planner.paths(env.tree, OperandSet(items[:2], items[2:]), 0.01, np.random.default_rng(0)):
        t = env.tree.clone()
        for n in path.nodes:
            if n.leaf is not None:
                t.insert(items[n.item], n.leaf, item_mass(items[n.item]))
