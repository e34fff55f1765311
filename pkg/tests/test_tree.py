import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pctpack import _kernels, oracles
from pctpack.env import EnvConfig, PackingEnv, SamplerSpec
from pctpack.geometry import BinSpec, Vec3
from pctpack.tree import (ItemSpec, LeafPlacement, LeafSet, PackingTree, intercept_indices, intercept_leaves)

BIN = BinSpec(Vec3(10, 10, 10))


def legal(tree, leaves):
    mm = leaves.minmax()
    inside = np.all(mm[:, :3] >= -1e-9, axis=1) & np.all(mm[:, 3:] <= np.array(tree.bin.size) + 1e-9, axis=1)
    if len(tree.boxes):
        free = ~_kernels.overlap_mask(mm, tree.boxes, tree.eps)
    else:
        free = np.ones(len(mm), bool)
    return inside & free


def test_empty_bin_corner_leaves():
    tree = PackingTree(BIN, orientations=1)
    leaves = tree.candidates_for(ItemSpec(Vec3(3, 4, 5)))
    assert {tuple(f) for f in leaves.flb} == {(0, 0, 0), (7, 0, 0), (0, 6, 0), (7, 6, 0)}


def test_first_split():
    tree = PackingTree(BIN)
    tree.insert(ItemSpec(Vec3(3, 4, 5)), LeafPlacement(Vec3(3, 4, 5), Vec3(0, 0, 0), 0))
    assert oracles.ems_as_set(tree.ems) == {(3, 0, 0, 10, 10, 10), (0, 4, 0, 10, 10, 10), (0, 0, 5, 10, 10, 10)}


def test_utilization_after_insert():
    tree = PackingTree(BIN)
    leaves = tree.candidates_for(ItemSpec(Vec3(2, 3, 4)))
    tree.insert(ItemSpec(Vec3(2, 3, 4)), leaves[0])
    assert tree.utilization() == pytest.approx(24 / 1000)
    assert oracles.ems_as_set(tree.ems) == oracles.maximal_empty_boxes(tree.boxes, (10, 10, 10))


def test_insert_rejects_overlap_and_escape():
    tree = PackingTree(BIN)
    item = ItemSpec(Vec3(5, 5, 5))
    tree.insert(item, LeafPlacement(Vec3(5, 5, 5), Vec3(0, 0, 0), 0))
    with pytest.raises(ValueError):
        tree.insert(item, LeafPlacement(Vec3(5, 5, 5), Vec3(2, 2, 2), 0))
    with pytest.raises(ValueError):
        tree.insert(item, LeafPlacement(Vec3(5, 5, 5), Vec3(6, 0, 0), 0))
    with pytest.raises(ValueError):
        tree.insert(item, LeafPlacement(Vec3(4, 5, 5), Vec3(5, 0, 0), 0))


def test_unknown_scheme():
    with pytest.raises(ValueError):
        PackingTree(BIN, "XYZ")


def test_item_spec_validation():
    with pytest.raises(ValueError):
        ItemSpec(Vec3(0, 1, 1))
    with pytest.raises(ValueError):
        ItemSpec(Vec3(1, 1, 1), density=1.5)
    assert ItemSpec(Vec3(1, 2, 3)).oriented(5) == Vec3(3, 2, 1)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["EMS", "EV", "CP", "EP"]))
def test_candidates_are_packable(seed, scheme):
    env = PackingEnv(EnvConfig(scheme=scheme), seed)
    rng = np.random.default_rng(seed)
    while not env.done:
        assert legal(env.tree, env.leaves).all()
        env.step(int(rng.integers(len(env.leaves))))
    # packed items never overlap
    b = env.tree.boxes
    for i in range(len(b)):
        assert not _kernels.overlap_mask(b[i:i + 1], np.delete(b, i, axis=0), 0.0)[0]


@given(st.integers(0, 2**31 - 1))
def test_ems_matches_voxel_oracle(seed):
    env = PackingEnv(EnvConfig(), seed)
    rng = np.random.default_rng(seed)
    while not env.done:
        env.step(int(rng.integers(len(env.leaves))))
        assert oracles.ems_as_set(env.tree.ems) == oracles.maximal_empty_boxes(env.tree.boxes, (10, 10, 10))


@given(st.integers(0, 2**31 - 1))
def test_ems_kernels_agree(seed):
    env = PackingEnv(EnvConfig(), seed)
    rng = np.random.default_rng(seed)
    ems = env.tree.ems
    while not env.done:
        env.step(int(rng.integers(len(env.leaves))))
        box = env.tree.boxes[-1]
        a = _kernels._ems_insert_np(ems, box, 0.0)
        if _kernels.HAVE_NUMBA:
            b = _kernels._ems_insert_nb(ems, box, 0.0)
            assert oracles.ems_as_set(a[0]) == oracles.ems_as_set(b[0])
        assert oracles.ems_as_set(a[0]) == oracles.ems_as_set(env.tree.ems)
        ems = env.tree.ems


def test_every_ems_is_empty_and_inside():
    env = PackingEnv(EnvConfig(), 3)
    rng = np.random.default_rng(3)
    while not env.done:
        env.step(int(rng.integers(len(env.leaves))))
        e = env.tree.ems
        assert np.all(e[:, :3] >= 0) and np.all(e[:, 3:] <= 10)
        assert not _kernels.overlap_mask(e, env.tree.boxes, 0.0).any()


def test_text_round_trip():
    env = PackingEnv(EnvConfig(setting=3), 11)
    rng = np.random.default_rng(11)
    for _ in range(6):
        env.step(int(rng.integers(len(env.leaves))))
    text = env.tree.to_text()
    back = PackingTree.from_text(text)
    assert back.to_text() == text
    assert np.array_equal(back.boxes, env.tree.boxes)
    assert np.array_equal(back.ems, env.tree.ems)
    with pytest.raises(ValueError):
        PackingTree.from_text("item 0 0 0 1 1 1\n")


def test_clone_is_independent():
    env = PackingEnv(EnvConfig(), 5)
    env.step(0)
    twin = env.tree.clone()
    env.step(0)
    assert len(twin.boxes) == 1 and len(env.tree.boxes) == 2
    assert twin.digest() != env.tree.digest()


def test_digest_ignores_insertion_order():
    a, b = PackingTree(BIN), PackingTree(BIN)
    i1, i2 = ItemSpec(Vec3(2, 2, 2)), ItemSpec(Vec3(3, 3, 3))
    l1 = LeafPlacement(Vec3(2, 2, 2), Vec3(0, 0, 0), 0)
    l2 = LeafPlacement(Vec3(3, 3, 3), Vec3(5, 5, 0), 0)
    a.insert(i1, l1).insert(i2, l2)
    b.insert(i2, l2).insert(i1, l1)
    assert a.digest() == b.digest()


def test_interception_keeps_order_and_size():
    rng = np.random.default_rng(0)
    idx = intercept_indices(100, 10, rng)
    assert len(idx) == 10 and np.all(np.diff(idx) > 0)
    assert np.array_equal(intercept_indices(5, 10, rng), np.arange(5))
    picked = intercept_leaves(list("abcdef"), 3, rng)
    assert len(picked) == 3 and picked == sorted(picked)
    with pytest.raises(ValueError):
        intercept_leaves([1, 2], 0, rng)


def test_leafset_dedup_and_index():
    ls = LeafSet([[0, 0, 0], [1, 0, 0], [0, 0, 0]], [[1, 1, 1]] * 3, [0, 0, 0], [0, 0, 0])
    d = ls.dedup()
    assert len(d) == 2
    assert d.index_of(ls[1]) == 1
    assert LeafSet.concat([LeafSet.empty(), d]).keys() == d.keys()


def test_continuous_bin_leaves():
    cfg = EnvConfig(bin=BinSpec(Vec3(1, 1, 1), "continuous"), sampler=SamplerSpec(kind="continuous"))
    env = PackingEnv(cfg, 2)
    rng = np.random.default_rng(2)
    while not env.done:
        assert legal(env.tree, env.leaves).all()
        env.step(int(rng.integers(len(env.leaves))))
    assert 0 < env.utilization < 1
