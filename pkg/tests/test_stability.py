import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from pctpack import oracles
from pctpack.env import EnvConfig, PackingEnv, SamplerSpec
from pctpack.geometry import BinSpec, Box3, Vec3
from pctpack.stability import _tol, bearing_forces, check_stable, convex_hull, stable_mask, strictly_inside
from pctpack.tree import ItemSpec, LeafPlacement, PackingTree
from pctpack.verify import random_stack

BIN = BinSpec(Vec3(10, 10, 10))


def stacked(*rows):
    tree = PackingTree(BIN, orientations=2)
    for x, y, z, w, d, h, m in rows:
        tree.insert(ItemSpec(Vec3(w, d, h)), LeafPlacement(Vec3(w, d, h), Vec3(x, y, z), 0), m)
    return tree


def test_floor_is_always_stable():
    assert check_stable(PackingTree(BIN), Box3(Vec3(3, 3, 0), Vec3(2, 2, 2)), 1.0).stable


def test_overhang_past_the_edge_falls():
    tree = stacked((0, 0, 0, 4, 4, 2, 16.0))
    assert check_stable(tree, Box3(Vec3(0, 0, 2), Vec3(4, 4, 2)), 1.0).stable
    # centre at x = 4.5 lies beyond the support edge at x = 4
    assert not check_stable(tree, Box3(Vec3(3, 0, 2), Vec3(3, 4, 2)), 1.0).stable
    # centre exactly on the edge is not strictly inside
    assert not check_stable(tree, Box3(Vec3(2, 0, 2), Vec3(4, 4, 2)), 1.0).stable


def test_bridge_over_two_supports():
    tree = stacked((0, 0, 0, 2, 4, 2, 8.0), (4, 0, 0, 2, 4, 2, 8.0))
    rep = check_stable(tree, Box3(Vec3(0, 0, 2), Vec3(6, 4, 1)), 24.0)
    assert rep.stable
    assert rep.support_ratio == 16 / 24
    assert len(rep.contact_set) == 2


def test_heavy_load_topples_lower_item():
    # item 1 overhangs item 0 but is balanced alone; a heavy item on its overhang tips it
    tree = stacked((0, 0, 0, 4, 4, 2, 1.0), (1, 0, 2, 4, 4, 1, 1.0))
    assert not check_stable(tree, Box3(Vec3(4, 0, 3), Vec3(1, 4, 1)), 100.0).stable
    assert check_stable(tree, Box3(Vec3(1, 0, 3), Vec3(1, 4, 1)), 100.0).stable


def test_conservation_hand_fixture():
    tree = stacked((0, 0, 0, 2, 4, 2, 1.0), (4, 0, 0, 2, 4, 2, 1.0), (0, 0, 2, 6, 4, 1, 3.0))
    rep = bearing_forces(tree)
    assert rep.floor_load == rep.total_mass == 5
    assert list(rep.loads) == [2.5, 2.5, 3.0]


def test_hull_and_inside():
    hull = convex_hull(np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]]))
    assert len(hull) == 4
    assert strictly_inside(hull, (0.5, 0.5))
    assert not strictly_inside(hull, (1.0, 0.5))


@given(st.integers(0, 2**31 - 1), st.booleans())
def test_loads_are_conserved_exactly(seed, continuous):
    tree = random_stack(np.random.default_rng(seed), continuous)
    rep = bearing_forces(tree)
    assert rep.floor_load == rep.total_mass


@given(st.integers(0, 2**31 - 1), st.booleans())
def test_verdicts_match_whole_stack_oracle(seed, continuous):
    rng = np.random.default_rng(seed)
    tree = random_stack(rng, continuous)
    free = PackingTree(tree.bin, tree.scheme, 6, False)
    free.internals, free.boxes, free.ems = tree.internals, tree.boxes, tree.ems
    size = tree.bin.size.x * rng.uniform(0.1, 0.5, 3) if continuous else rng.integers(1, 6, 3)
    cands = free.candidates_for(ItemSpec(Vec3(*size)))
    masses = np.array([n.mass for n in tree.internals] + [1.0])
    fast = stable_mask(tree, cands.minmax(), 1.0)
    for k, leaf in enumerate(cands):
        got = check_stable(tree, leaf.box, 1.0).stable
        want = oracles.support_stable(np.vstack([tree.boxes, leaf.as_minmax()]), masses, _tol(tree))
        assert got == want
        assert fast[k] == got


def test_stability_filtered_episode_stays_stable():
    cfg = EnvConfig(setting=3, sampler=SamplerSpec(density=True))
    env = PackingEnv(cfg, 4)
    rng = np.random.default_rng(4)
    while not env.done:
        env.step(int(rng.integers(len(env.leaves))))
        masses = np.array([n.mass for n in env.tree.internals])
        assert oracles.support_stable(env.tree.boxes, masses, 0.0)
