"""Oracle suites behind ``pctpack verify``: each compares a fast path with a brute-force reference."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import oracles
from .env import EnvConfig, PackingEnv, SamplerSpec, item_mass
from .geometry import BinSpec, Vec3
from .policy import (Descriptor, Policy, backward, embed_state, forward, forward_features, loss_terms,
                     zeros_like)
from .stability import _tol, bearing_forces, check_stable, stable_mask
from .tree import ItemSpec, PackingTree


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def run(*a, **kw):
        t0 = time.perf_counter()
        chk = fn(*a, **kw)
        chk.seconds = time.perf_counter() - t0
        return chk
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def _random_env(seed: int, scheme: str = "EMS", setting: int = 2) -> PackingEnv:
    return PackingEnv(EnvConfig(setting=setting, scheme=scheme), seed)


@_timed
def verify_ems(episodes: int = 500, seed: int = 0) -> Check:
    """EMS after every insertion equals the voxel maximal-empty-box set."""
    rng = np.random.default_rng(seed)
    dims = (10, 10, 10)
    inserts = 0
    for ep in range(episodes):
        env = _random_env(int(rng.integers(2**31)))
        while not env.done:
            env.step(int(rng.integers(len(env.leaves))))
            inserts += 1
            got = oracles.ems_as_set(env.tree.ems)
            want = oracles.maximal_empty_boxes(env.tree.boxes, dims)
            if got != want:
                return Check("ems-oracle", False, f"episode {ep}, insertion {env.t}: "
                             f"{len(got - want)} extra, {len(want - got)} missing")
    return Check("ems-oracle", True, f"{episodes} episodes, {inserts} insertions, 0 mismatches")


@_timed
def verify_ev(states: int = 200, seed: int = 0) -> Check:
    """Every convex vertex of every plane's feasible region is an event-point leaf."""
    rng = np.random.default_rng(seed)
    misses = 0
    vertices = 0
    for k in range(states):
        env = PackingEnv(EnvConfig(scheme="EV"), int(rng.integers(2**31)))
        stop = int(rng.integers(0, 25))
        while not env.done and env.t < stop:
            env.step(int(rng.integers(len(env.leaves))))
        tree = env.tree
        item = ItemSpec(Vec3(*(int(v) for v in rng.integers(1, 6, size=3))))
        leaves = tree.candidates_for(item)
        have = {(int(o), *map(float, f)) for o, f in zip(leaves.orient, leaves.flb)}
        for o in tree.orientations:
            size = tuple(item.oriented(o))
            for z in tree.z_levels():
                if z + size[2] > tree.bin.size.z:
                    continue
                for x, y in oracles.brute_convex_vertices(tuple(tree.bin.size), size, tree.boxes, float(z)):
                    vertices += 1
                    if (o, x, y, float(z)) not in have:
                        misses += 1
    return Check("ev-coverage", misses == 0, f"{states} states, {vertices} convex vertices, {misses} misses")


def _fixture(seed: int, n_internal: int = 2, n_leaves: int = 2):
    """A small state (internal + leaf + item nodes) and random parameters."""
    rng = np.random.default_rng(seed)
    env = PackingEnv(EnvConfig(), seed)
    while len(env.tree.internals) < n_internal and not env.done:
        env.step(int(rng.integers(len(env.leaves))))
    leaves = env.leaves[np.sort(rng.choice(len(env.leaves), size=min(n_leaves, len(env.leaves)),
                                           replace=False))]
    pol = Policy.create(Descriptor(), seed)
    return env.tree, env.item, leaves, pol


@_timed
def verify_attention(seed: int = 0, fd_samples: int | None = 24, rel_tol: float = 1e-4) -> Check:
    """Forward pass vs a loop-based masked reimplementation, padding invariance and a gradient check."""
    worst_fwd = 0.0
    pad_ok = True
    for s in range(20):
        tree, item, leaves, pol = _fixture(seed + s, n_internal=3 + s % 5, n_leaves=2 + s % 7)
        fw = pol.evaluate(tree, item, leaves)
        for extra_int, extra_leaf in ((80, 150), (90, 200)):
            feats = embed_state(tree, item, leaves, pol.desc, extra_int, extra_leaf)
            lp, v = oracles.dense_policy(pol.params, feats.internal, feats.internal_mask, feats.leaves,
                                         feats.leaf_mask, feats.item)
            worst_fwd = max(worst_fwd, float(np.abs(lp[feats.leaf_mask] - fw.logp).max()), abs(v - fw.value))
            pad = forward_features(pol.params, feats)
            pad_ok &= bool(np.array_equal(pad.logp, fw.logp) and pad.value == fw.value)
    # gradient check on a 5-node state: 2 internal, 2 leaves, 1 item
    tree, item, leaves, pol = _fixture(seed, 2, 2)
    from .policy import describe

    xb, xl, xi = describe(tree, item, leaves, pol.desc)
    assert len(xb) + len(xl) + len(xi) == 5
    p = pol.params
    action, adv, target, ent = 1, 0.7, 1.3, 0.05

    def loss():
        return loss_terms(forward(p, xb, xl, xi), action, adv, target, 1.0, 0.5, ent)[0]

    fw = forward(p, xb, xl, xi)
    _, g_logp, g_value = loss_terms(fw, action, adv, target, 1.0, 0.5, ent)
    grads = backward(p, fw, g_logp, g_value, zeros_like(p))
    rng = np.random.default_rng(seed)
    h = 1e-5  # near cbrt(machine eps); smaller steps drown the attention weights' tiny gradients in roundoff
    worst_rel = 0.0
    for name, w in p.items():
        flat = w.reshape(-1)
        idx = np.arange(flat.size) if fd_samples is None or flat.size <= fd_samples else \
            rng.choice(flat.size, size=fd_samples, replace=False)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            num[k] = (up - down) / (2 * h)
        ana = grads[name].reshape(-1)[idx]
        denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-8)
        worst_rel = max(worst_rel, float(np.linalg.norm(ana - num) / denom))
    ok = worst_fwd <= 1e-10 and pad_ok and worst_rel <= rel_tol
    return Check("attention-pointer", ok, f"max forward diff {worst_fwd:.2e}, padding exact {pad_ok}, "
                 f"gradient rel. error {worst_rel:.2e}")


@_timed
def verify_reward(placements: int = 1000, seed: int = 0) -> Check:
    """Each step's reward is c_r * volume; an episode returns 10x its utilisation."""
    rng = np.random.default_rng(seed)
    cfg = EnvConfig()
    bad = 0
    done = 0
    worst_return = 0.0
    while done < placements:
        env = PackingEnv(cfg, int(rng.integers(2**31)))
        total = 0.0
        while not env.done and done < placements:
            a = int(rng.integers(len(env.leaves)))
            leaf = env.leaves[a]
            res = env.step(a)
            done += 1
            vol = leaf.oriented_size.x * leaf.oriented_size.y * leaf.oriented_size.z
            bad += res.reward != (10.0 / cfg.bin.volume) * vol
            total += res.reward
        if env.done:
            worst_return = max(worst_return, abs(total - 10.0 * env.utilization))
    ok = bad == 0 and worst_return <= 1e-12
    return Check("reward", ok, f"{placements} placements, {bad} mismatches, "
                 f"max |return - 10 uti| {worst_return:.1e}")


def random_stack(rng: np.random.Generator, continuous: bool = False) -> PackingTree:
    """A stable random stack built through stability-filtered leaves (Setting 3 densities)."""
    if continuous:
        cfg = EnvConfig(bin=BinSpec(Vec3(1.0, 1.0, 1.0), "continuous"), setting=3,
                        sampler=SamplerSpec(kind="continuous", density=True))
    else:
        cfg = EnvConfig(setting=3, sampler=SamplerSpec(density=True))
    env = PackingEnv(cfg, int(rng.integers(2**31)))
    n = int(rng.integers(3, 30))
    while not env.done and env.t < n:
        env.step(int(rng.integers(len(env.leaves))))
    return env.tree


@_timed
def verify_stability(stacks: int = 1000, seed: int = 0) -> Check:
    """Exact load conservation, and verdicts vs the whole-stack convex-hull oracle."""
    rng = np.random.default_rng(seed)
    leaks = 0
    disagree = 0
    stable_count = 0
    probes = 0
    for k in range(stacks):
        tree = random_stack(rng, continuous=bool(k % 2))
        rep = bearing_forces(tree)
        leaks += rep.floor_load != rep.total_mass
        # probe every non-overlapping placement of a random item, stable or not
        free = PackingTree(tree.bin, tree.scheme, 6, False)
        free.internals, free.boxes, free.ems = tree.internals, tree.boxes, tree.ems
        item = ItemSpec(tree.bin.size.x * rng.uniform(0.1, 0.5, size=3) if tree.bin.mode == "continuous"
                        else Vec3(*(int(v) for v in rng.integers(1, 6, size=3))), float(1.0 - rng.random()))
        cands = free.candidates_for(item)
        mass = item_mass(item)
        fast = stable_mask(tree, cands.minmax(), mass)
        masses = np.array([nd.mass for nd in tree.internals] + [mass])
        for j, leaf in enumerate(cands):
            got = check_stable(tree, leaf.box, mass).stable
            want = oracles.support_stable(np.vstack([tree.boxes, leaf.as_minmax()[None, :]]), masses, _tol(tree))
            disagree += (got != want) + (bool(fast[j]) != want)
            stable_count += got
            probes += 1
    ok = leaks == 0 and disagree == 0
    return Check("stability", ok, f"{stacks} stacks, {leaks} conservation failures, "
                 f"{disagree} verdict disagreements over {probes} probes ({stable_count} stable)")


SUITES = {
    "ems": verify_ems,
    "ev": verify_ev,
    "attention": verify_attention,
    "reward": verify_reward,
    "stability": verify_stability,
}
QUICK = {"ems": {"episodes": 20}, "ev": {"states": 10}, "attention": {}, "reward": {"placements": 200},
         "stability": {"stacks": 100}}


def run_suites(names=None, quick: bool = False, seed: int = 0) -> list[Check]:
    names = list(SUITES) if not names else list(names)
    out = []
    for n in names:
        if n not in SUITES:
            raise ValueError(f"unknown suite {n!r}; choose from {', '.join(SUITES)}")
        kw = dict(QUICK[n]) if quick else {}
        out.append(SUITES[n](seed=seed, **kw))
    return out
