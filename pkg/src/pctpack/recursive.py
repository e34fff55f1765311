"""Large-scale packing by splitting the tree into sub-bins and merging their preferences."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .env import EnvConfig, PackingEnv, SamplerSpec
from .geometry import BinSpec, Vec3
from .policy import LEAVES_PER_ORIENTATION, Policy, describe_arrays, forward
from .tree import ItemSpec, LeafSet, PackingTree, intercept_indices

INTEGRATORS = ("spatial_ensemble", "max_state_value", "max_volume", "max_return", "min_surface_area")


@dataclass
class SubProblem:
    sub_bin: np.ndarray  # min/max of the historical EMS used as the sub-bin
    root: int  # item whose host is the sub-bin (-1: the whole bin)
    internals: np.ndarray  # indices of packed items overlapping the sub-bin
    boxes: np.ndarray  # those items clipped to the sub-bin (min/max)
    leaves: np.ndarray  # indices into the global leaf set lying inside the sub-bin

    @property
    def offset(self) -> np.ndarray:
        return self.sub_bin[:3]

    @property
    def size(self) -> np.ndarray:
        return self.sub_bin[3:] - self.sub_bin[:3]


def subtree_sizes(tree: PackingTree) -> np.ndarray:
    """Number of items in each item's sub-tree (itself included); parents precede children."""
    n = len(tree.internals)
    size = np.ones(n, dtype=np.int64)
    parent = [node.parent for node in tree.internals]
    for v in range(n - 1, -1, -1):
        if parent[v] >= 0:
            size[parent[v]] += size[v]
    return size


def _inside(inner: np.ndarray, outer: np.ndarray, eps: float) -> np.ndarray:
    inner = inner.reshape(-1, 6)
    return np.all(inner[:, :3] >= outer[:3] - eps, axis=1) & np.all(inner[:, 3:] <= outer[3:] + eps, axis=1)


def backtrack(tree: PackingTree, ems_index: int, tau: int, sizes: np.ndarray | None = None,
              box: np.ndarray | None = None) -> tuple[int, np.ndarray]:
    """Sub-bin for a leaf growing out of EMS ``ems_index``.

    Climb from the item that created the EMS towards the root and stop at the
    first item whose sub-tree holds more than ``tau`` items and whose host
    space contains the leaf ``box`` (default: the whole EMS); that host is the
    sub-bin. Returns ``(node, sub_bin)`` with node -1 for the whole bin.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    sizes = subtree_sizes(tree) if sizes is None else sizes
    target = tree.ems[ems_index] if box is None else np.asarray(box, dtype=np.float64)
    whole = np.array([0.0, 0.0, 0.0, *tree.bin.size])
    v = int(tree.ems_creator[ems_index])
    while v >= 0:
        host = tree.internals[v].host
        if sizes[v] > tau and host is not None and _inside(target[None, :], host, tree.eps)[0]:
            return v, np.asarray(host, dtype=np.float64).copy()
        v = tree.internals[v].parent
    return -1, whole


def _clip(boxes: np.ndarray, sub_bin: np.ndarray, eps: float):
    lo = np.maximum(boxes[:, :3], sub_bin[:3])
    hi = np.minimum(boxes[:, 3:], sub_bin[3:])
    hit = np.all(hi - lo > eps, axis=1)
    return np.flatnonzero(hit), np.concatenate([lo, hi], axis=1)[hit]


def decompose(tree: PackingTree, leaves: LeafSet, tau: int, rng: np.random.Generator) -> list[SubProblem]:
    """Cover every leaf with sub-problems grown from randomly chosen unassigned leaves."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if tree.scheme != "EMS":
        raise ValueError("recursive packing needs the EMS scheme")
    n = len(leaves)
    if n == 0:
        return []
    eps = tree.eps
    boxes = leaves.minmax()
    sizes = subtree_sizes(tree)
    assigned = np.zeros(n, dtype=bool)
    subs: list[SubProblem] = []
    seen: set[tuple] = set()
    while not assigned.all():
        seed = int(rng.choice(np.flatnonzero(~assigned)))
        root, sub_bin = backtrack(tree, int(leaves.source[seed]), tau, sizes, boxes[seed])
        key = tuple(np.round(sub_bin, 12))
        inside = _inside(boxes, sub_bin, eps)
        assigned |= inside
        if key in seen:
            continue
        seen.add(key)
        idx, clipped = _clip(tree.boxes, sub_bin, eps) if len(tree.boxes) else (np.zeros(0, int), np.zeros((0, 6)))
        subs.append(SubProblem(sub_bin, root, idx, clipped, np.flatnonzero(inside)))
    return subs


# -- normalisation -------------------------------------------------------------------

def normalize_boxes(boxes: np.ndarray, sub_bin: np.ndarray, bin_size) -> np.ndarray:
    """Map min/max rows from the sub-bin frame onto the full bin: (b - FLB(c)) * S / s."""
    sub_bin = np.asarray(sub_bin, dtype=np.float64)
    size = sub_bin[3:] - sub_bin[:3]
    if np.any(size <= 0):
        raise ValueError("degenerate sub-bin")
    scale = np.asarray(bin_size, dtype=np.float64) / size
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 6)
    return np.concatenate([(boxes[:, :3] - sub_bin[:3]) * scale, (boxes[:, 3:] - sub_bin[:3]) * scale], axis=1)


def denormalize_boxes(boxes: np.ndarray, sub_bin: np.ndarray, bin_size) -> np.ndarray:
    sub_bin = np.asarray(sub_bin, dtype=np.float64)
    scale = (sub_bin[3:] - sub_bin[:3]) / np.asarray(bin_size, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 6)
    return np.concatenate([boxes[:, :3] * scale + sub_bin[:3], boxes[:, 3:] * scale + sub_bin[:3]], axis=1)


@dataclass
class NormalizedProblem:
    boxes: np.ndarray
    density: np.ndarray
    category: np.ndarray
    leaves: LeafSet
    item: ItemSpec
    ems: np.ndarray  # global EMSs clipped to the sub-bin, normalised
    bin: BinSpec


def normalize(tree: PackingTree, sub: SubProblem, leaves: LeafSet, item: ItemSpec) -> NormalizedProblem:
    S = np.array(tree.bin.size)
    scale = S / sub.size
    lv = leaves[sub.leaves]
    flb = (lv.flb - sub.offset) * scale
    lhat = LeafSet(flb, lv.size * scale, lv.orient, lv.source)
    nodes = [tree.internals[i] for i in sub.internals]
    _, ems = _clip(tree.ems, sub.sub_bin, tree.eps)
    return NormalizedProblem(
        normalize_boxes(sub.boxes, sub.sub_bin, S),
        np.array([n.density for n in nodes]), np.array([n.category for n in nodes]),
        lhat, ItemSpec(Vec3(*(np.array(item.size) * scale)), item.density, item.category),
        normalize_boxes(ems, sub.sub_bin, S), BinSpec(tree.bin.size, "continuous"))


# -- value sources -----------------------------------------------------------------------

class NetworkSource:
    """Preferences and state values from a trained policy."""

    def __init__(self, policy: Policy):
        self.policy = policy

    def evaluate(self, prob: NormalizedProblem):
        xb, xl, xi = describe_arrays(prob.bin.size, prob.boxes, prob.density, prob.category,
                                     prob.item, prob.leaves, self.policy.desc)
        fwd = forward(self.policy.params, xb, xl, xi)
        return fwd.probs, fwd.value


class HeuristicSource:
    """Training-free stand-in: softmax over a compactness score, value from free space.

    The score prefers low, back, left placements that hug existing items; the
    value is the largest empty box's share of the bin (scaled like rewards).
    """

    def __init__(self, temperature: float = 0.05):
        self.temperature = temperature

    def scores(self, prob: NormalizedProblem) -> np.ndarray:
        S = np.array(prob.bin.size)
        lv = prob.leaves
        top = (lv.flb[:, 2] + lv.size[:, 2]) / S[2]
        far = (lv.flb[:, 0] + lv.size[:, 0]) / S[0] + (lv.flb[:, 1] + lv.size[:, 1]) / S[1]
        return -(top + 0.1 * far)

    def evaluate(self, prob: NormalizedProblem):
        s = self.scores(prob) / self.temperature
        e = np.exp(s - s.max())
        return e / e.sum(), proxy_value(prob.ems, prob.bin)


def proxy_value(ems: np.ndarray, bin: BinSpec) -> float:
    if not len(ems):
        return 0.0
    vol = np.prod(ems[:, 3:] - ems[:, :3], axis=1).max()
    return 10.0 * float(vol) / bin.volume


# -- integration -------------------------------------------------------------------------

@dataclass
class SubEvaluation:
    sub: SubProblem
    leaf_ids: np.ndarray  # global leaf indices actually scored (after interception)
    probs: np.ndarray
    value: float
    volume: float
    problem: NormalizedProblem


def evaluate_subs(tree: PackingTree, leaves: LeafSet, item: ItemSpec, subs: list[SubProblem], source,
                  leaf_limit: int | None, rng: np.random.Generator) -> list[SubEvaluation]:
    out = []
    for sub in subs:
        ids = sub.leaves
        if leaf_limit is not None and len(ids) > leaf_limit:
            ids = ids[intercept_indices(len(ids), leaf_limit, rng)]
        if not len(ids):
            continue
        local = SubProblem(sub.sub_bin, sub.root, sub.internals, sub.boxes, ids)
        prob = normalize(tree, local, leaves, item)
        probs, value = source.evaluate(prob)
        vol = float(np.prod(prob.boxes[:, 3:] - prob.boxes[:, :3], axis=1).sum())
        out.append(SubEvaluation(local, ids, probs, value, vol, prob))
    return out


def rank_table(evals: list[SubEvaluation], n_leaves: int) -> np.ndarray:
    """(sub, leaf) table of ascending ranks with midpoint ties; NaN where a leaf is absent."""
    table = np.full((len(evals), n_leaves), np.nan)
    for i, ev in enumerate(evals):
        table[i, ev.leaf_ids] = rankdata(ev.probs, method="average")
    return table


def spatial_ensemble(table: np.ndarray) -> int:
    """Leaf with the best worst rank over the sub-bins that contain it (lowest index on ties)."""
    present = ~np.isnan(table)
    worst = np.where(present, table, np.inf).min(axis=0)
    worst[~present.any(axis=0)] = -np.inf
    return int(np.argmax(worst))


def _surface(prob: NormalizedProblem, k: int) -> float:
    leaf = prob.leaves.minmax()[k]
    boxes = np.vstack([prob.boxes, leaf[None, :]])
    d = boxes[:, 3:].max(axis=0) - boxes[:, :3].min(axis=0)
    return float(d[0] * d[1] + d[0] * d[2] + d[1] * d[2])


def integrate(evals: list[SubEvaluation], n_leaves: int, kind: str = "spatial_ensemble") -> int:
    """Global leaf index chosen by the integrator."""
    if not evals:
        raise ValueError("no leaf in any sub-problem")
    if kind == "spatial_ensemble":
        return spatial_ensemble(rank_table(evals, n_leaves))
    if kind not in INTEGRATORS:
        raise ValueError(f"unknown integrator {kind!r}")
    best_local = [int(np.argmax(ev.probs)) for ev in evals]
    if kind == "max_state_value":
        phi = [ev.value for ev in evals]
    elif kind == "max_volume":
        phi = [ev.volume for ev in evals]
    elif kind == "max_return":
        phi = [ev.value + 10.0 * ev.volume / ev.problem.bin.volume for ev in evals]
    else:
        phi = [-_surface(ev.problem, k) for ev, k in zip(evals, best_local)]
    c = int(np.argmax(phi))
    return int(evals[c].leaf_ids[best_local[c]])


def choose_leaf(tree: PackingTree, leaves: LeafSet, item: ItemSpec, tau: int, source, kind: str,
                rng: np.random.Generator, leaf_limit: int | None) -> int:
    subs = decompose(tree, leaves, tau, rng)
    evals = evaluate_subs(tree, leaves, item, subs, source, leaf_limit, rng)
    return integrate(evals, len(leaves), kind)


# -- experiment -----------------------------------------------------------------------------

def large_scale_config(n_bar: int) -> EnvConfig:
    return EnvConfig(bin=BinSpec(Vec3(1.0, 1.0, 1.0), "continuous"), setting=2,
                     sampler=SamplerSpec(kind="large", n_bar=n_bar), scheme="EMS")


@dataclass
class EpisodeMetrics:
    seed: int
    utilization: float
    items: int
    seconds: float
    subproblems: float = 0.0


def run_large_scale(n_bar: int, tau: int, integrator: str, source, seeds, leaf_limit: int | None = None,
                    sequences: dict | None = None) -> list[EpisodeMetrics]:
    """Online episodes at scale ``n_bar`` with decomposition at every step."""
    cfg = large_scale_config(n_bar)
    if leaf_limit is None:
        leaf_limit = LEAVES_PER_ORIENTATION * cfg.n_orientations
    out = []
    for s in seeds:
        env = PackingEnv(cfg, int(s), None if sequences is None else sequences[s])
        rng = np.random.default_rng([int(s), 11])
        t0 = time.perf_counter()
        nsub = []
        while not env.done:
            subs = decompose(env.tree, env.leaves, tau, rng)
            nsub.append(len(subs))
            evals = evaluate_subs(env.tree, env.leaves, env.item, subs, source, leaf_limit, rng)
            env.step(integrate(evals, len(env.leaves), integrator))
        out.append(EpisodeMetrics(int(s), env.utilization, env.n_packed, time.perf_counter() - t0,
                                  float(np.mean(nsub)) if nsub else 0.0))
    return out
