"""Tree-of-Packing planner for online, lookahead, buffering and offline packing.

A plan enumerates (or samples) orders over the selectable and previewed
items, rolls each order out on a cloned tree with placements picked by the
placement policy, and scores the path by the reward of the placed items plus
a terminal value when unknown items still follow. Only the first selectable
node of the best path is executed.
"""
from __future__ import annotations

import hashlib
import itertools
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, PackingEnv, item_mass
from .heuristics import heuristic_policy
from .policy import Policy
from .tree import ItemSpec, LeafPlacement, LeafSet, PackingTree, intercept_indices

VALUE_SOURCES = ("proxy", "critic", "none")


@dataclass
class OperandSet:
    selectable: list[ItemSpec]
    previewed: list[ItemSpec] = field(default_factory=list)
    unknown_present: bool = True

    def __post_init__(self):
        self.selectable = list(self.selectable)
        self.previewed = list(self.previewed)

    @property
    def s(self) -> int:
        return len(self.selectable)

    @property
    def p(self) -> int:
        return len(self.previewed)

    @property
    def items(self) -> list[ItemSpec]:
        return self.selectable + self.previewed

    @property
    def regime(self) -> str:
        if not self.unknown_present:
            return "offline" if self.p == 0 else "general"
        if self.s == 1:
            return "online" if self.p == 0 else "lookahead"
        return "buffering" if self.p == 0 else "general"


@dataclass(frozen=True)
class PathNode:
    item: int  # index into OperandSet.items
    selectable: bool
    leaf: LeafPlacement | None  # None: the item found no placement and was skipped
    prob: float


@dataclass(frozen=True)
class PlanPath:
    order: tuple[int, ...]
    nodes: tuple[PathNode, ...]
    placed_volume: float
    frontier_value: float
    score: float

    @property
    def first_selectable(self) -> PathNode | None:
        for n in self.nodes:
            if n.selectable and n.leaf is not None:
                return n
        return None

    def rank_key(self) -> tuple:
        # higher score first, then the more probable path, then the lower order
        return (-self.score, tuple(-n.prob for n in self.nodes), self.order)


@dataclass
class PlannerConfig:
    m: int = 64
    horizon: int | None = None  # None: p + s + 8
    full_depth: bool = False
    value: str = "proxy"
    leaf_limit: int | None = None
    use_cache: bool = True
    cache_size: int = 20000

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.value not in VALUE_SOURCES:
            raise ValueError(f"unknown value source {self.value!r}")


class PathCache:
    """Least-recently-used map from (state digest, order prefix) keys to results."""

    def __init__(self, capacity: int = 20000):
        self.capacity = capacity
        self._data: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._data)

    def lookup(self, key):
        if key in self._data:
            self._data.move_to_end(key)
            self.hits += 1
            return self._data[key]
        self.misses += 1
        return None

    def store(self, key, value) -> None:
        self._data[key] = value
        self._data.move_to_end(key)
        while len(self._data) > self.capacity:
            self._data.popitem(last=False)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


# -- placement / value sources -------------------------------------------------------------

class PolicySource:
    """Placements from a trained policy; value from its critic or a free-space proxy."""

    def __init__(self, policy: Policy):
        self.policy = policy

    def probs(self, tree: PackingTree, item: ItemSpec, leaves: LeafSet) -> np.ndarray:
        if len(leaves) == 1:
            return np.ones(1)
        return self.policy.evaluate(tree, item, leaves).probs

    def critic(self, tree: PackingTree, item: ItemSpec, leaves: LeafSet) -> float:
        return self.policy.value(tree, item, leaves)


class RuleSource:
    """A rule-based placement as a one-hot distribution (no critic)."""

    def __init__(self, kind: str = "DBL"):
        self.kind = kind
        self._choose = heuristic_policy(kind)

    def probs(self, tree: PackingTree, item: ItemSpec, leaves: LeafSet) -> np.ndarray:
        out = np.zeros(len(leaves))
        out[self._choose(tree, leaves, np.random.default_rng(0))] = 1.0
        return out

    def critic(self, tree, item, leaves) -> float:
        raise ValueError("heuristic sources have no critic; use the proxy value")


def proxy_value(tree: PackingTree) -> float:
    """Largest empty box as a share of the bin, on the reward scale (10 per full bin)."""
    if not len(tree.ems):
        return 0.0
    vol = float(np.prod(tree.ems[:, 3:] - tree.ems[:, :3], axis=1).max())
    return 10.0 * vol / tree.bin.volume


# -- orders -------------------------------------------------------------------------------

def mcts_sample_orders(n: int, m: int, rng: np.random.Generator | None = None) -> list[tuple[int, ...]]:
    """Up to ``m`` distinct orders of ``n`` items, arrival order first.

    All ``n!`` orders are returned (arrival first, then lexicographic) when they fit the budget.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    ident = tuple(range(n))
    if n <= 1 or m == 1:
        return [ident]
    if math.factorial(n) <= m:
        return list(itertools.permutations(range(n)))
    rng = rng if rng is not None else np.random.default_rng()
    seen = {ident}
    out = [ident]
    while len(out) < m:
        o = tuple(int(v) for v in rng.permutation(n))
        if o not in seen:
            seen.add(o)
            out.append(o)
    return out


# -- simulation -----------------------------------------------------------------------------

def state_digest(tree: PackingTree) -> str:
    """Digest of the packed items in insertion order (the order the policy sees)."""
    h = hashlib.sha1(tree.digest().encode())
    h.update((np.round(tree.boxes, 9) + 0.0).tobytes())
    return h.hexdigest()


def _item_key(item: ItemSpec) -> tuple:
    return (tuple(item.size), item.density, item.category)


def above_any(boxes: np.ndarray, blockers: list[np.ndarray], eps: float) -> np.ndarray:
    """Rows of ``boxes`` that sit on or over the top face of some blocker's footprint."""
    out = np.zeros(len(boxes), dtype=bool)
    for b in blockers:
        ox = np.minimum(boxes[:, 3], b[3]) - np.maximum(boxes[:, 0], b[0])
        oy = np.minimum(boxes[:, 4], b[4]) - np.maximum(boxes[:, 1], b[1])
        out |= (ox > eps) & (oy > eps) & (boxes[:, 2] >= b[5] - eps)
    return out


def below_any(boxes: np.ndarray, covers: list[np.ndarray], eps: float) -> np.ndarray:
    """Rows of ``boxes`` lying under some cover's footprint."""
    out = np.zeros(len(boxes), dtype=bool)
    for c in covers:
        ox = np.minimum(boxes[:, 3], c[3]) - np.maximum(boxes[:, 0], c[0])
        oy = np.minimum(boxes[:, 4], c[4]) - np.maximum(boxes[:, 1], c[1])
        out |= (ox > eps) & (oy > eps) & (boxes[:, 5] <= c[2] + eps)
    return out


class Planner:
    def __init__(self, source, config: PlannerConfig | None = None, cache: PathCache | None = None):
        self.source = source
        self.config = config or PlannerConfig()
        self.cache = cache if cache is not None else PathCache(self.config.cache_size)
        self.fresh_nodes = 0  # policy evaluations actually performed
        self.fresh_paths = 0

    # a single placement decision, cached on (state, item, masks)
    def _node(self, tree: PackingTree, digest: str, item: ItemSpec, over: list[np.ndarray],
              under: list[np.ndarray]):
        """``over``: footprints the item may not sit above; ``under``: boxes it may not slip beneath."""
        key = ("node", digest, _item_key(item), tuple(tuple(np.round(b, 9)) for b in over),
               tuple(tuple(np.round(b, 9)) for b in under))
        if self.config.use_cache:
            hit = self.cache.lookup(key)
            if hit is not None:
                return hit
        leaves = tree.candidates_for(item, item_mass(item))
        if (over or under) and len(leaves):
            mm = leaves.minmax()
            leaves = leaves[~(above_any(mm, over, tree.eps) | below_any(mm, under, tree.eps))]
        limit = self.config.leaf_limit
        if limit is not None and len(leaves) > limit:
            seed = int(hashlib.sha1(repr(key).encode()).hexdigest()[:15], 16)
            leaves = leaves[intercept_indices(len(leaves), limit, np.random.default_rng(seed))]
        if not len(leaves):
            res = (None, 1.0)
        else:
            self.fresh_nodes += 1
            pr = self.source.probs(tree, item, leaves)
            a = int(np.argmax(pr))
            res = (leaves[a], float(pr[a]))
        if self.config.use_cache:
            self.cache.store(key, res)
        return res

    def _frontier(self, tree: PackingTree, digest: str, stand_in: ItemSpec | None) -> float:
        kind = self.config.value
        if kind == "none":
            return 0.0
        if kind == "proxy":
            return proxy_value(tree)
        key = ("value", digest, None if stand_in is None else _item_key(stand_in))
        if self.config.use_cache:
            hit = self.cache.lookup(key)
            if hit is not None:
                return hit
        if stand_in is None:
            v = 0.0
        else:
            leaves = tree.candidates_for(stand_in, item_mass(stand_in))
            v = self.source.critic(tree, stand_in, leaves) if len(leaves) else 0.0
        if self.config.use_cache:
            self.cache.store(key, v)
        return v

    def horizon(self, ops: OperandSet) -> int:
        if self.config.full_depth:
            return len(ops.items)
        return self.config.horizon if self.config.horizon is not None else ops.p + ops.s + 8

    def simulate(self, tree: PackingTree, ops: OperandSet, order: tuple[int, ...],
                 reward_const: float) -> PlanPath:
        root = state_digest(tree)
        pkey = ("path", root, tuple(_item_key(ops.items[i]) + (i < ops.s,) for i in order),
                ops.unknown_present, self.config.value, self.horizon(ops))
        depth = self.horizon(ops)
        # past the horizon the remaining items follow in arrival order
        seq = list(order[:depth]) + sorted(order[depth:])
        if self.config.use_cache:
            hit = self.cache.lookup(pkey)
            if hit is not None:
                # equal items may sit at different positions; re-point the nodes
                nodes = tuple(PathNode(i, n.selectable, n.leaf, n.prob) for i, n in zip(seq, hit.nodes))
                return PlanPath(order, nodes, hit.placed_volume, hit.frontier_value, hit.score)
        self.fresh_paths += 1
        items = ops.items
        t = tree.clone()
        digest = root
        nodes = []
        volumes = []
        # previewed items arrive later and are loaded from the top: selectable
        # items may not rest over them, and they may not go under selectable ones
        previewed: list[np.ndarray] = []
        reachable: list[np.ndarray] = []
        for i in seq:
            item = items[i]
            selectable = i < ops.s
            if selectable:
                leaf, prob = self._node(t, digest, item, previewed, [])
            else:
                leaf, prob = self._node(t, digest, item, [], reachable)
            nodes.append(PathNode(i, selectable, leaf, prob))
            if leaf is None:
                continue
            t.insert(item, leaf, item_mass(item))
            digest = state_digest(t)
            volumes.append(item.volume)
            (reachable if selectable else previewed).append(leaf.as_minmax())
        placed = math.fsum(volumes)
        frontier = 0.0
        if ops.unknown_present:
            frontier = self._frontier(t, digest, items[seq[-1]] if seq else None)
        score = reward_const * placed + frontier
        path = PlanPath(order, tuple(nodes), placed, frontier, score)
        if self.config.use_cache:
            self.cache.store(pkey, path)
        return path

    def paths(self, tree: PackingTree, ops: OperandSet, reward_const: float,
              rng: np.random.Generator | None = None) -> list[PlanPath]:
        if ops.s < 1:
            raise ValueError("planning needs at least one selectable item")
        orders = mcts_sample_orders(len(ops.items), self.config.m, rng)
        return [self.simulate(tree, ops, o, reward_const) for o in orders]

    def best_path(self, tree: PackingTree, ops: OperandSet, reward_const: float,
                  rng: np.random.Generator | None = None) -> PlanPath | None:
        """Best path that executes a selectable item, or ``None`` (terminal)."""
        cands = [p for p in self.paths(tree, ops, reward_const, rng) if p.first_selectable is not None]
        if not cands:
            return None
        return min(cands, key=PlanPath.rank_key)

    def plan(self, tree: PackingTree, ops: OperandSet, reward_const: float,
             rng: np.random.Generator | None = None) -> tuple[int, LeafPlacement] | None:
        """First selectable node of the best path as ``(selectable index, placement)``."""
        best = self.best_path(tree, ops, reward_const, rng)
        if best is None:
            return None
        node = best.first_selectable
        return node.item, node.leaf


def plan(tree: PackingTree, operands: OperandSet, source, m: int = 64, rng=None,
         reward_const: float | None = None, **kw):
    """One-shot planning call; see :class:`Planner` for reuse with a cache."""
    planner = Planner(source, PlannerConfig(m=m, **kw))
    rc = 10.0 / tree.bin.volume if reward_const is None else reward_const
    return planner.plan(tree, operands, rc, rng)


# -- episodes -----------------------------------------------------------------------------

def item_stream(config: EnvConfig, seed: int, sequence=None):
    """The item sequence an online episode with the same seed would see."""
    env = PackingEnv(config, seed, sequence)
    item = env.item
    while item is not None:
        yield item
        item = env._draw()


@dataclass
class VariantResult:
    seed: int
    utilization: float
    items: int
    decisions: int
    seconds: float
    violations: int  # executed placements above a previewed item's planned footprint
    hit_rate: float
    actions: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # (executed box, planned previewed boxes) per decision


def run_variant(config: EnvConfig, s: int, p: int, source, planner_config: PlannerConfig | None = None,
                seed: int = 0, sequence=None, planner: Planner | None = None,
                max_items: int | None = None) -> VariantResult:
    """Pack a stream with ``s`` reachable items and ``p`` previewed ones until no reachable item fits."""
    if s < 1 or p < 0:
        raise ValueError("need s >= 1 and p >= 0")
    planner = planner or Planner(source, planner_config)
    stream = item_stream(config, seed, sequence)
    rng = np.random.default_rng([seed, 17])
    tree = config.new_tree()
    queue: list[ItemSpec] = []
    exhausted = False
    violations = 0
    decisions = 0
    actions = []
    trace = []
    t0 = time.perf_counter()
    while True:
        while not exhausted and len(queue) < s + p:
            nxt = next(stream, None)
            if nxt is None:
                exhausted = True
            else:
                queue.append(nxt)
        if not queue:
            break
        sel, prev = queue[:s], queue[s:s + p]
        ops = OperandSet(sel, prev, unknown_present=not exhausted or len(queue) > s + p)
        best = planner.best_path(tree, ops, config.reward_const, rng)
        if best is None:
            break
        node = best.first_selectable
        box = node.leaf.as_minmax()
        planned = [n.leaf.as_minmax() for n in best.nodes if not n.selectable and n.leaf is not None]
        violations += int(above_any(box[None, :], planned, tree.eps)[0])
        tree.insert(queue[node.item], node.leaf, item_mass(queue[node.item]))
        actions.append((node.item, tuple(node.leaf.flb), node.leaf.orientation_index))
        trace.append((box, planned))
        queue.pop(node.item)
        decisions += 1
        if max_items is not None and decisions >= max_items:
            break
    return VariantResult(seed, tree.utilization(), len(tree.internals), decisions,
                         time.perf_counter() - t0, violations, planner.cache.hit_rate, actions, trace)


def plan_offline(tree: PackingTree, items: list[ItemSpec], source, config: PlannerConfig | None = None,
                 rng=None, planner: Planner | None = None) -> PlanPath | None:
    """Plan once over a fully known item set; the returned path is executed as is."""
    planner = planner or Planner(source, config)
    ops = OperandSet(items, [], unknown_present=False)
    return planner.best_path(tree, ops, 10.0 / tree.bin.volume, rng)


def execute_path(tree: PackingTree, items: list[ItemSpec], path: PlanPath) -> PackingTree:
    for n in path.nodes:
        if n.leaf is not None:
            tree.insert(items[n.item], n.leaf, item_mass(items[n.item]))
    return tree
