import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pctpack.env import PackingEnv
from pctpack.heuristics import heuristic_policy
from pctpack.recursive import (INTEGRATORS, HeuristicSource, SubEvaluation, backtrack, choose_leaf, decompose,
                               denormalize_boxes, evaluate_subs, integrate, large_scale_config,
                               normalize_boxes, rank_table, run_large_scale, spatial_ensemble, subtree_sizes)



def grown(n_items, seed=0, n_bar=200):
    env = PackingEnv(large_scale_config(n_bar), seed)
    choose = heuristic_policy("DBL")
    while not env.done and env.n_packed < n_items:
        env.step(choose(env.tree, env.leaves))
    return env


@pytest.fixture(scope="module")
def hundred():
    env = grown(100, seed=1, n_bar=500)
    assert env.n_packed == 100
    return env


def test_subtree_sizes_sum_to_item_count(hundred):
    sizes = subtree_sizes(hundred.tree)
    roots = [i for i, n in enumerate(hundred.tree.internals) if n.parent < 0]
    assert sum(sizes[r] for r in roots) == 100


def test_small_tree_uses_whole_bin():
    env = grown(10)
    subs = decompose(env.tree, env.leaves, 30, np.random.default_rng(0))
    assert len(subs) == 1
    assert subs[0].root == -1
    assert np.array_equal(subs[0].sub_bin, [0, 0, 0, 1, 1, 1])
    assert len(subs[0].leaves) == len(env.leaves)


def test_backtrack_stops_at_first_large_host(hundred):
    tree = hundred.tree
    sizes = subtree_sizes(tree)
    tau = 30
    for e in range(len(tree.ems)):
        v, sub = backtrack(tree, e, tau, sizes)
        box = tree.ems[e]
        # walk the same chain and confirm nothing closer qualified
        u = int(tree.ems_creator[e])
        while u >= 0 and u != v:
            host = tree.internals[u].host
            inside = host is not None and np.all(box[:3] >= host[:3]) and np.all(box[3:] <= host[3:])
            assert not (sizes[u] > tau and inside)
            u = tree.internals[u].parent
        if v >= 0:
            assert sizes[v] > tau
            assert np.all(box[:3] >= sub[:3] - 1e-9) and np.all(box[3:] <= sub[3:] + 1e-9)
        else:
            assert np.array_equal(sub, [0, 0, 0, 1, 1, 1])


def test_backtrack_rejects_bad_tau(hundred):
    with pytest.raises(ValueError):
        backtrack(hundred.tree, 0, 0)


@pytest.mark.parametrize("tau", [5, 30, 60])
def test_decomposition_covers_every_leaf(hundred, tau):
    leaves = hundred.leaves
    subs = decompose(hundred.tree, leaves, tau, np.random.default_rng(tau))
    covered = np.zeros(len(leaves), bool)
    mm = leaves.minmax()
    for sub in subs:
        covered[sub.leaves] = True
        inner = mm[sub.leaves]
        assert np.all(inner[:, :3] >= sub.sub_bin[:3] - 1e-9)
        assert np.all(inner[:, 3:] <= sub.sub_bin[3:] + 1e-9)
        # clipped internals stay inside the sub-bin
        if len(sub.boxes):
            assert np.all(sub.boxes[:, :3] >= sub.sub_bin[:3] - 1e-12)
            assert np.all(sub.boxes[:, 3:] <= sub.sub_bin[3:] + 1e-12)
    assert covered.all()
    assert len({tuple(s.sub_bin) for s in subs}) == len(subs)


def test_unbounded_tau_matches_direct_choice(hundred):
    src = HeuristicSource()
    tree, leaves, item = hundred.tree, hundred.leaves, hundred.item
    rng = np.random.default_rng(0)
    got = choose_leaf(tree, leaves, item, 10**9, src, "spatial_ensemble", rng, None)
    subs = decompose(tree, leaves, 10**9, np.random.default_rng(0))
    ev = evaluate_subs(tree, leaves, item, subs, src, None, np.random.default_rng(0))
    assert len(ev) == 1
    assert got == int(np.argmax(ev[0].probs))


@given(st.lists(st.floats(0.0, 0.9), min_size=6, max_size=6), st.lists(st.floats(0.05, 0.5), min_size=3,
                                                                         max_size=3))
def test_normalisation_round_trip(raw, size):
    sub = np.array([*raw[:3], *(np.array(raw[:3]) + size)])
    boxes = np.array([[*sub[:3], *sub[3:]]])
    n = normalize_boxes(boxes, sub, (1, 1, 1))
    assert np.allclose(n, [[0, 0, 0, 1, 1, 1]])
    assert np.allclose(denormalize_boxes(n, sub, (1, 1, 1)), boxes)


def test_normalise_rejects_flat_sub_bin():
    with pytest.raises(ValueError):
        normalize_boxes(np.zeros((1, 6)), np.array([0, 0, 0, 1, 0, 1.0]), (1, 1, 1))


def fake_eval(ids, probs, value=0.0, volume=0.0):
    return SubEvaluation(None, np.array(ids), np.array(probs, float), value, volume, None)


def test_rank_table_and_max_min():
    evals = [fake_eval([0, 1, 2], [0.2, 0.5, 0.3]), fake_eval([1, 2, 3], [0.1, 0.6, 0.3])]
    table = rank_table(evals, 4)
    assert np.array_equal(table[0, :3], [1, 3, 2])
    assert np.isnan(table[0, 3]) and np.isnan(table[1, 0])
    # worst ranks: leaf0 1, leaf1 1, leaf2 2, leaf3 2; first best index wins
    assert spatial_ensemble(table) == 2


def test_rank_ties_use_midpoints():
    table = rank_table([fake_eval([0, 1, 2], [0.4, 0.4, 0.2])], 3)
    assert list(table[0]) == [2.5, 2.5, 1.0]


def test_single_candidate_integrators():
    evals = [fake_eval([0, 1], [0.9, 0.1], value=1.0, volume=0.2),
             fake_eval([2, 3], [0.3, 0.7], value=2.0, volume=0.1)]
    assert integrate(evals, 4, "max_state_value") == 3
    assert integrate(evals, 4, "max_volume") == 0
    with pytest.raises(ValueError):
        integrate(evals, 4, "best_guess")
    with pytest.raises(ValueError):
        integrate([], 4)


def test_large_scale_episode_runs():
    rows = run_large_scale(50, 30, "spatial_ensemble", HeuristicSource(), [0])
    assert 0.3 < rows[0].utilization < 1
    assert rows[0].subproblems >= 1


def test_all_integrators_run():
    env = grown(60, seed=2)
    rng = np.random.default_rng(0)
    for kind in INTEGRATORS:
        a = choose_leaf(env.tree, env.leaves, env.item, 5, HeuristicSource(), kind, rng, 20)
        assert 0 <= a < len(env.leaves)
