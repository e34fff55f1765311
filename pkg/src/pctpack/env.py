"""The packing MDP: item samplers, settings, rewards and constraint objectives."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import BinSpec, Vec3, heightmap
from .stability import bearing_forces, contacts_below, _tol
from .tree import ItemSpec, LeafPlacement, LeafSet, PackingTree, intercept_indices

CONSTRAINTS = ("none", "isle", "balance", "bearing", "kinematic", "bridge", "heightvar")
SAMPLER_KINDS = ("discrete", "continuous", "normal", "large", "multiscale")
NORMALS = ((0.3, 0.1), (0.1, 0.2), (0.5, 0.2))


@dataclass(frozen=True)
class SamplerSpec:
    """Declarative item distribution.

    Continuous sizes are fractions of the bin side and get scaled by it;
    discrete sizes are integers on the bin grid.
    """

    kind: str = "discrete"
    low: float = 0.1
    high: float | None = None  # default: half the bin side
    z_set: tuple[float, ...] | None = None
    mean: float = 0.3
    std: float = 0.1
    clip: tuple[float, float] = (0.1, 0.5)
    disturb: float = 0.0  # delta_i ~ U(-disturb, disturb), fixed per sequence
    n_bar: int = 200
    density: bool = False
    categories: int = 0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.z_set is not None:
            object.__setattr__(self, "z_set", tuple(float(z) for z in self.z_set))
        object.__setattr__(self, "clip", tuple(float(v) for v in self.clip))


def discrete_item_set(bin: BinSpec, high: float | None = None) -> list[tuple[int, int, int]]:
    """All integer size triples with each side in ``[1, S/2]`` (or ``high``)."""
    tops = [int(math.floor(high if high is not None else s / 2)) for s in bin.size]
    return list(itertools.product(*(range(1, t + 1) for t in tops)))


class ItemSampler:
    """Stateful per-sequence sampler (disturbance and multi-scale draws are per sequence)."""

    def __init__(self, spec: SamplerSpec, bin: BinSpec):
        self.spec = spec
        self.bin = bin
        self.items = discrete_item_set(bin, spec.high) if spec.kind == "discrete" else None
        self.probs = None
        self.scale = NORMALS[0]

    def begin(self, rng: np.random.Generator) -> None:
        spec = self.spec
        if spec.kind == "discrete":
            p = np.full(len(self.items), 1.0 / len(self.items))
            if spec.disturb > 0:
                delta = rng.uniform(-spec.disturb, spec.disturb, len(p))
                p = p * (1 - delta)
                if p.sum() <= 0:
                    p = np.full(len(self.items), 1.0)
                p = p / p.sum()
            self.probs = p
        elif spec.kind == "multiscale":
            self.scale = NORMALS[int(rng.integers(len(NORMALS)))]

    def _side(self, rng: np.random.Generator, axis: int) -> float:
        spec = self.spec
        S = self.bin.size[axis]
        if spec.kind == "continuous":
            hi = spec.high if spec.high is not None else 0.5
            return S * float(rng.uniform(spec.low, hi))
        if spec.kind == "large":
            hi = (8.0 / spec.n_bar) ** (1.0 / 3.0)
            return S * hi * float(1.0 - rng.random())  # (0, hi]
        mean, std = (spec.mean, spec.std) if spec.kind == "normal" else self.scale
        lo, hi = spec.clip
        while True:
            v = float(rng.normal(mean, std))
            if lo <= v <= hi:
                return S * v

    def sample(self, rng: np.random.Generator) -> ItemSpec:
        spec = self.spec
        if spec.kind == "discrete":
            if self.probs is None:
                self.begin(rng)
            size = self.items[int(rng.choice(len(self.items), p=self.probs))]
        else:
            size = [self._side(rng, a) for a in range(3)]
            if spec.z_set is not None:
                size[2] = self.bin.size.z * float(spec.z_set[int(rng.integers(len(spec.z_set)))])
        density = float(1.0 - rng.random()) if spec.density else 1.0
        category = int(rng.integers(spec.categories)) if spec.categories > 0 else 0
        return ItemSpec(Vec3(*size), density, category)


def sample_item(sampler: ItemSampler, rng: np.random.Generator) -> ItemSpec:
    return sampler.sample(rng)


@dataclass(frozen=True)
class EnvConfig:
    bin: BinSpec = field(default_factory=lambda: BinSpec(Vec3(10.0, 10.0, 10.0)))
    setting: int = 2
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    constraint: str = "none"
    constraint_weight: float = 0.1
    f_bar: float = 1.0
    scheme: str = "EMS"
    leaf_limit: int | None = None  # random interception length; None keeps every leaf
    orientations: int | None = None  # default follows the setting

    def __post_init__(self):
        if self.setting not in (1, 2, 3):
            raise ValueError(f"setting must be 1, 2 or 3, got {self.setting}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.f_bar <= 0:
            raise ValueError("f_bar must be positive")
        if self.leaf_limit is not None and self.leaf_limit < 1:
            raise ValueError("leaf_limit must be >= 1")

    @property
    def reward_const(self) -> float:
        return 10.0 / self.bin.volume

    @property
    def n_orientations(self) -> int:
        if self.orientations is not None:
            return self.orientations
        return 6 if self.setting == 2 else 2

    @property
    def require_stability(self) -> bool:
        return self.setting in (1, 3)

    def new_tree(self) -> PackingTree:
        return PackingTree(self.bin, self.scheme, self.n_orientations, self.require_stability)


@dataclass
class StepResult:
    reward: float
    done: bool
    next_item: ItemSpec | None
    leaves: LeafSet
    volume: float = 0.0
    constraint: float = 0.0  # raw f of the placed item


def item_mass(item: ItemSpec) -> float:
    return item.volume * item.density


# -- constraint objectives ------------------------------------------------------

def _centers(boxes: np.ndarray) -> np.ndarray:
    return 0.5 * (boxes[:, :3] + boxes[:, 3:])


def _floor_mass_grid(tree: PackingTree) -> np.ndarray:
    """Mass above each floor cell; every item spreads its mass over its footprint."""
    S = tree.bin.size
    if tree.bin.mode == "discrete":
        nx, ny = int(round(S.x / tree.bin.grid_step)), int(round(S.y / tree.bin.grid_step))
    else:
        nx = ny = 10
    xe = np.linspace(0.0, S.x, nx + 1)
    ye = np.linspace(0.0, S.y, ny + 1)
    grid = np.zeros((nx, ny))
    for b, node in zip(tree.boxes, tree.internals):
        ox = np.clip(np.minimum(xe[1:], b[3]) - np.maximum(xe[:-1], b[0]), 0, None)
        oy = np.clip(np.minimum(ye[1:], b[4]) - np.maximum(ye[:-1], b[1]), 0, None)
        grid += node.mass * np.outer(ox, oy) / ((b[3] - b[0]) * (b[4] - b[1]))
    return grid


def constraint_reward(kind: str, tree: PackingTree, index: int | None = None) -> float:
    """Raw objective value after the item at ``index`` (default: the last one) was inserted."""
    if kind == "none" or not tree.internals:
        return 0.0
    i = len(tree.internals) - 1 if index is None else index
    boxes = tree.boxes
    box = boxes[i]
    if kind == "isle":
        cat = tree.internals[i].category
        others = [j for j, n in enumerate(tree.internals) if j != i and n.category == cat]
        if not others:
            return 0.0
        d = np.linalg.norm(_centers(boxes[others]) - _centers(box[None, :]), axis=1)
        return -float(d.min())
    if kind == "balance":
        return -float(np.var(_floor_mass_grid(tree)))
    if kind == "bearing":
        rep = bearing_forces(tree)
        carried = rep.loads - np.array([n.mass for n in tree.internals])
        return -float(carried.mean())
    if kind == "bridge":
        return float(len(contacts_below(boxes, box, _tol(tree))))
    if kind == "heightvar":
        return -heightmap(boxes, tree.bin).variance()
    if kind == "kinematic":
        return kinematic_clearance(tree, i)
    raise ValueError(f"unknown constraint {kind!r}")


def kinematic_clearance(tree: PackingTree, i: int) -> float:
    """Horizontal gap between item ``i`` and the nearest packed item rising above its top.

    The gripper descends through the column above the item, so anything taller
    nearby narrows the approach. Normalised by the bin diagonal; 1 when the
    approach is unobstructed.
    """
    boxes = tree.boxes
    box = boxes[i]
    taller = np.array([j for j in range(len(boxes)) if j != i and boxes[j, 5] > box[5] + tree.eps], dtype=np.int64)
    if not taller.size:
        return 1.0
    o = boxes[taller]
    gx = np.maximum(0.0, np.maximum(o[:, 0] - box[3], box[0] - o[:, 3]))
    gy = np.maximum(0.0, np.maximum(o[:, 1] - box[4], box[1] - o[:, 4]))
    diag = math.hypot(tree.bin.size.x, tree.bin.size.y)
    return float(min(1.0, np.hypot(gx, gy).min() / diag))


# -- the environment --------------------------------------------------------------

class PackingEnv:
    """Single-writer packing episode.

    Item draws and leaf interception use separate random streams, so methods
    evaluated on the same seed see the same item sequence.
    """

    def __init__(self, config: EnvConfig, seed: int | None = None, sequence: Sequence[ItemSpec] | None = None):
        self.config = config
        self.sampler = ItemSampler(config.sampler, config.bin)
        self.log: list[dict] = []
        self.reset(seed, sequence)

    # state
    def reset(self, seed: int | None = None, sequence: Sequence[ItemSpec] | None = None) -> "PackingEnv":
        ss = np.random.SeedSequence(seed)
        self.item_rng, self.leaf_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        self.sequence = list(sequence) if sequence is not None else None
        self.cursor = 0
        self.buffer: list[ItemSpec] = []
        self.sampler.begin(self.item_rng)
        self.tree = self.config.new_tree()
        self.t = 0
        self.total_reward = 0.0
        self.log = []
        self.done = False
        self.item = self._next_item()
        self.all_leaves = LeafSet.empty()
        self.leaves = self._compute_leaves()
        self.done = self.item is None or len(self.leaves) == 0
        return self

    def _draw(self) -> ItemSpec | None:
        if self.sequence is not None:
            if self.cursor >= len(self.sequence):
                return None
            self.cursor += 1
            return self.sequence[self.cursor - 1]
        return self.sampler.sample(self.item_rng)

    def _next_item(self) -> ItemSpec | None:
        return self.buffer.pop(0) if self.buffer else self._draw()

    def peek(self, k: int) -> list[ItemSpec]:
        """The current item plus up to ``k - 1`` upcoming ones (drawn ahead, then replayed)."""
        if self.item is None:
            return []
        while len(self.buffer) < k - 1:
            nxt = self._draw()
            if nxt is None:
                break
            self.buffer.append(nxt)
        return [self.item] + self.buffer[:k - 1]

    def _compute_leaves(self) -> LeafSet:
        if self.item is None:
            return LeafSet.empty()
        leaves = self.tree.candidates_for(self.item, item_mass(self.item))
        self.all_leaves = leaves
        if self.config.leaf_limit is not None and len(leaves) > self.config.leaf_limit:
            leaves = leaves[intercept_indices(len(leaves), self.config.leaf_limit, self.leaf_rng)]
        return leaves

    @property
    def utilization(self) -> float:
        return self.tree.utilization()

    @property
    def n_packed(self) -> int:
        return len(self.tree.internals)

    def reward_for(self, volume: float, f: float) -> float:
        cfg = self.config
        if cfg.constraint == "none":
            return cfg.reward_const * volume
        # f-hat is on the scale of the utilisation reward; express it in volume units
        w = max(0.0, volume + cfg.constraint_weight * (f / cfg.f_bar) / cfg.reward_const)
        return cfg.reward_const * w

    def step(self, action: int) -> StepResult:
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        if not 0 <= int(action) < len(self.leaves):
            raise IndexError(f"action {action} out of range for {len(self.leaves)} leaves")
        return self.place(self.leaves[int(action)])

    def place(self, leaf: LeafPlacement) -> StepResult:
        """Insert the current item at an arbitrary packable placement."""
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        item = self.item
        self.tree.insert(item, leaf, item_mass(item))
        f = constraint_reward(self.config.constraint, self.tree)
        r = self.reward_for(item.volume, f)
        self.total_reward += r
        self.log.append({"step": self.t, "item": list(item.size), "density": item.density,
                         "category": item.category, "flb": list(leaf.flb),
                         "orientation": leaf.orientation_index, "reward": r})
        self.t += 1
        self.item = self._next_item()
        self.leaves = self._compute_leaves()
        # the item that finds no leaf earns nothing and ends the episode
        self.done = self.item is None or len(self.leaves) == 0
        return StepResult(r, self.done, self.item, self.leaves, item.volume, f)

    def clone(self) -> "PackingEnv":
        env = PackingEnv.__new__(PackingEnv)
        env.__dict__.update(self.__dict__)
        env.tree = self.tree.clone()
        env.tree.leaves = self.tree.leaves
        env.item_rng = _copy_rng(self.item_rng)
        env.leaf_rng = _copy_rng(self.leaf_rng)
        env.sequence = list(self.sequence) if self.sequence is not None else None
        env.buffer = list(self.buffer)
        env.sampler = ItemSampler(self.sampler.spec, self.sampler.bin)
        env.sampler.probs, env.sampler.scale = self.sampler.probs, self.sampler.scale
        env.log = list(self.log)
        return env


def _copy_rng(rng: np.random.Generator) -> np.random.Generator:
    g = np.random.default_rng()
    g.bit_generator.state = rng.bit_generator.state
    return g


def reset(config: EnvConfig, rng: np.random.Generator | int | None = None,
          sequence: Sequence[ItemSpec] | None = None) -> PackingEnv:
    seed = int(rng.integers(2**63)) if isinstance(rng, np.random.Generator) else rng
    return PackingEnv(config, seed, sequence)


def step(state: PackingEnv, action: int) -> StepResult:
    return state.step(action)


def run_random_episode(config: EnvConfig, seed: int) -> PackingEnv:
    env = PackingEnv(config, seed)
    pick = np.random.default_rng([seed, 7])
    while not env.done:
        env.step(int(pick.integers(len(env.leaves))))
    return env


def estimate_f_bar(config: EnvConfig, episodes: int = 200, rng: np.random.Generator | int | None = 0) -> float:
    """Mean absolute per-episode constraint total under a uniformly random policy."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if config.constraint == "none":
        return 1.0
    base = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    seeds = base.integers(2**31, size=episodes)
    totals = []
    for s in seeds:
        env = PackingEnv(config, int(s))
        pick = np.random.default_rng([int(s), 7])
        total = 0.0
        while not env.done:
            total += env.step(int(pick.integers(len(env.leaves)))).constraint
        totals.append(abs(total))
    v = float(np.mean(totals))
    return v if math.isfinite(v) and v > 1e-12 else 1.0


# -- records ---------------------------------------------------------------------------

def write_episode_log(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_episode_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
