"""Packing configuration tree: packed items, empty maximal spaces and candidate leaves."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .geometry import BinSpec, Box3, Vec3

SCHEMES = ("CP", "EP", "EMS", "EV")

# Axis permutations; 0 and 1 keep the item's height (the two-orientation setting).
ORIENTATIONS: tuple[tuple[int, int, int], ...] = (
    (0, 1, 2), (1, 0, 2), (0, 2, 1), (2, 0, 1), (1, 2, 0), (2, 1, 0),
)


@dataclass(frozen=True)
class ItemSpec:
    size: Vec3
    density: float = 1.0
    category: int = 0

    def __post_init__(self):
        object.__setattr__(self, "size", Vec3(*(float(v) for v in self.size)))
        if min(self.size) <= 0:
            raise ValueError(f"item sizes must be positive, got {tuple(self.size)}")
        if not 0 < self.density <= 1:
            raise ValueError(f"density must lie in (0, 1], got {self.density}")

    @property
    def volume(self) -> float:
        return self.size.x * self.size.y * self.size.z

    def oriented(self, o: int) -> Vec3:
        p = ORIENTATIONS[o]
        return Vec3(self.size[p[0]], self.size[p[1]], self.size[p[2]])


@dataclass
class InternalNode:
    box: Box3
    density: float = 1.0
    category: int = 0
    mass: float = 0.0
    extras: dict = field(default_factory=dict)
    host: np.ndarray | None = None  # historical EMS (min/max) the item was placed into
    parent: int = -1  # item that created ``host``; -1 for the empty bin


@dataclass(frozen=True)
class LeafPlacement:
    oriented_size: Vec3
    flb: Vec3
    orientation_index: int
    source_ems: int = -1

    @property
    def box(self) -> Box3:
        return Box3(self.flb, self.oriented_size)

    def as_minmax(self) -> np.ndarray:
        return np.array([*self.flb, *(p + s for p, s in zip(self.flb, self.oriented_size))])


class LeafSet:
    """Candidate placements held as arrays; behaves like a sequence of ``LeafPlacement``."""

    __slots__ = ("flb", "size", "orient", "source")

    def __init__(self, flb: np.ndarray, size: np.ndarray, orient: np.ndarray, source: np.ndarray):
        self.flb = np.asarray(flb, dtype=np.float64).reshape(-1, 3)
        self.size = np.asarray(size, dtype=np.float64).reshape(-1, 3)
        self.orient = np.asarray(orient, dtype=np.int64).reshape(-1)
        self.source = np.asarray(source, dtype=np.int64).reshape(-1)

    @classmethod
    def empty(cls) -> "LeafSet":
        return cls(np.empty((0, 3)), np.empty((0, 3)), np.empty(0), np.empty(0))

    @classmethod
    def from_leaves(cls, leaves: Sequence[LeafPlacement]) -> "LeafSet":
        if isinstance(leaves, LeafSet):
            return leaves
        if not leaves:
            return cls.empty()
        return cls([l.flb for l in leaves], [l.oriented_size for l in leaves],
                   [l.orientation_index for l in leaves], [l.source_ems for l in leaves])

    def __len__(self) -> int:
        return len(self.orient)

    def __getitem__(self, i):
        if isinstance(i, (slice, np.ndarray, list)):
            return LeafSet(self.flb[i], self.size[i], self.orient[i], self.source[i])
        i = int(i)
        return LeafPlacement(Vec3(*map(float, self.size[i])), Vec3(*map(float, self.flb[i])),
                             int(self.orient[i]), int(self.source[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __bool__(self) -> bool:
        return len(self) > 0

    def minmax(self) -> np.ndarray:
        return np.concatenate([self.flb, self.flb + self.size], axis=1)

    def keys(self) -> list[tuple]:
        return [(int(o), tuple(map(float, p))) for o, p in zip(self.orient, self.flb)]

    def index_of(self, leaf: LeafPlacement, eps: float = 0.0) -> int:
        hit = (self.orient == leaf.orientation_index) & np.all(np.abs(self.flb - np.array(leaf.flb)) <= eps, axis=1)
        idx = np.flatnonzero(hit)
        return int(idx[0]) if idx.size else -1

    @staticmethod
    def concat(parts: Sequence["LeafSet"]) -> "LeafSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return LeafSet.empty()
        return LeafSet(np.concatenate([p.flb for p in parts]), np.concatenate([p.size for p in parts]),
                       np.concatenate([p.orient for p in parts]), np.concatenate([p.source for p in parts]))

    def dedup(self) -> "LeafSet":
        """Drop repeated (orientation, flb) keys, keeping first occurrences in order."""
        if len(self) < 2:
            return self
        key = np.concatenate([self.orient[:, None].astype(np.float64), self.flb], axis=1)
        _, first = np.unique(key, axis=0, return_index=True)
        return self[np.sort(first)]


def orientation_set(n: int) -> tuple[int, ...]:
    if n not in (1, 2, 6):
        raise ValueError(f"|O| must be 1, 2 or 6, got {n}")
    return tuple(range(n))


class PackingTree:
    """Mutable packing state; one writer at a time.

    The EMS set is maintained for every scheme because recursive packing uses
    it as the source of sub-bins. ``split_inspections`` counts the box tests
    done by the most recent insertion.
    """

    def __init__(self, bin: BinSpec, scheme: str = "EMS", orientations: int = 6,
                 require_stability: bool = False):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.bin = bin
        self.scheme = scheme
        self.orientations = orientation_set(orientations)
        self.require_stability = require_stability
        self.internals: list[InternalNode] = []
        self.boxes = np.empty((0, 6))
        self.ems = np.array([[0.0, 0.0, 0.0, *bin.size]])
        self.ems_creator = np.array([-1], dtype=np.int64)
        self.points: list[tuple[float, float, float]] = [(0.0, 0.0, 0.0)]  # CP / EP anchors
        self.leaves: LeafSet = LeafSet.empty()
        self.split_inspections = 0

    # -- basic views ---------------------------------------------------------

    @property
    def eps(self) -> float:
        return self.bin.eps

    def packed_volume(self) -> float:
        return float(np.prod(self.boxes[:, 3:] - self.boxes[:, :3], axis=1).sum()) if len(self.boxes) else 0.0

    def utilization(self) -> float:
        return self.packed_volume() / self.bin.volume

    def ems_boxes(self) -> list[Box3]:
        return [Box3.from_minmax(r) for r in self.ems]

    def clone(self) -> "PackingTree":
        t = PackingTree.__new__(PackingTree)
        t.bin = self.bin
        t.scheme = self.scheme
        t.orientations = self.orientations
        t.require_stability = self.require_stability
        t.internals = list(self.internals)
        t.boxes = self.boxes.copy()
        t.ems = self.ems.copy()
        t.ems_creator = self.ems_creator.copy()
        t.points = list(self.points)
        t.leaves = self.leaves
        t.split_inspections = 0
        return t

    def digest(self) -> str:
        """Order-independent hash of the packed configuration."""
        rows = np.round(self.boxes, 9) + 0.0
        rows = rows[np.lexsort(rows.T[::-1])] if len(rows) else rows
        h = hashlib.sha1()
        h.update(repr((tuple(self.bin.size), self.bin.mode, self.scheme, self.orientations)).encode())
        h.update(rows.tobytes())
        return h.hexdigest()

    # -- candidate generation -----------------------------------------------

    def candidates_for(self, item: ItemSpec, mass: float | None = None) -> LeafSet:
        gen = {"EMS": self._ems_candidates, "EV": self._ev_candidates,
               "CP": self._point_candidates, "EP": self._point_candidates}[self.scheme]
        leaves = gen(item)
        if self.require_stability and len(leaves):
            from .stability import stable_mask

            m = item.volume * item.density if mass is None else mass
            leaves = leaves[stable_mask(self, leaves.minmax(), m)]
        self.leaves = leaves
        return leaves

    def _ems_candidates(self, item: ItemSpec) -> LeafSet:
        e = self.ems
        eps = self.eps
        ext = e[:, 3:] - e[:, :3]
        parts = []
        for o in self.orientations:
            sv = np.array(item.oriented(o))
            idx = np.flatnonzero(np.all(ext >= sv - eps, axis=1))
            if not idx.size:
                continue
            f = e[idx]
            left, right = f[:, 0], f[:, 3] - sv[0]
            front, back = f[:, 1], f[:, 4] - sv[1]
            # left-up, right-up, left-bottom, right-bottom corners in FLB form
            xs = np.stack([left, right, left, right], axis=1)
            ys = np.stack([back, back, front, front], axis=1)
            zs = np.repeat(f[:, 2:3], 4, axis=1)
            flb = np.stack([xs, ys, zs], axis=2).reshape(-1, 3)
            src = np.repeat(idx, 4)
            parts.append((src, o, sv, flb))
        if not parts:
            return LeafSet.empty()
        src = np.concatenate([p[0] for p in parts])
        orient = np.concatenate([np.full(len(p[0]), p[1]) for p in parts])
        size = np.concatenate([np.repeat(p[2][None, :], len(p[0]), axis=0) for p in parts])
        flb = np.concatenate([p[3] for p in parts])
        # EMS-major layout
        order = np.argsort(src, kind="stable")
        return LeafSet(flb[order], size[order], orient[order], src[order]).dedup()

    def packable_mask(self, cand: np.ndarray) -> np.ndarray:
        """Containment and non-overlap for min/max candidate rows."""
        eps = self.eps
        inside = np.all(cand[:, :3] >= -eps, axis=1) & np.all(cand[:, 3:] <= np.array(self.bin.size) + eps, axis=1)
        ok = inside.copy()
        if len(self.boxes) and ok.any():
            ok[ok] = ~_kernels.overlap_mask(cand[ok], self.boxes, eps)
        return ok

    def _grid_leaves(self, flbs: np.ndarray, o: int, sv: np.ndarray) -> LeafSet:
        cand = np.concatenate([flbs, flbs + sv], axis=1)
        ok = self.packable_mask(cand)
        n = int(ok.sum())
        return LeafSet(flbs[ok], np.repeat(sv[None, :], n, axis=0), np.full(n, o), np.full(n, -1))

    def _point_candidates(self, item: ItemSpec) -> LeafSet:
        if not self.points:
            return LeafSet.empty()
        pts = np.array(self.points, dtype=np.float64)
        parts = [self._grid_leaves(pts, o, np.array(item.oriented(o))) for o in self.orientations]
        return LeafSet.concat(parts).dedup()

    def z_levels(self) -> np.ndarray:
        b = self.boxes
        return _unique(np.concatenate([[0.0], b[:, 2], b[:, 5]]), self.eps)

    def event_axes(self, z: float, size: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        """Event coordinates (x, y) for an oriented item resting at plane ``z``."""
        eps = self.eps
        sx, sy, sz = size
        b = self.boxes
        sel = (b[:, 2] <= z + sz + eps) & (b[:, 5] >= z - eps)
        bp = b[sel]
        xs = np.concatenate([[0.0, self.bin.size.x - sx], bp[:, 0], bp[:, 3], bp[:, 0] - sx, bp[:, 3] - sx])
        ys = np.concatenate([[0.0, self.bin.size.y - sy], bp[:, 1], bp[:, 4], bp[:, 1] - sy, bp[:, 4] - sy])
        xs = _unique(xs[(xs >= -eps) & (xs <= self.bin.size.x - sx + eps)], eps)
        ys = _unique(ys[(ys >= -eps) & (ys <= self.bin.size.y - sy + eps)], eps)
        return xs, ys

    def _ev_candidates(self, item: ItemSpec) -> LeafSet:
        parts = []
        levels = self.z_levels()
        for o in self.orientations:
            sv = np.array(item.oriented(o))
            for z in levels:
                if z + sv[2] > self.bin.size.z + self.eps:
                    continue
                xs, ys = self.event_axes(z, sv)
                if not len(xs) or not len(ys):
                    continue
                gx, gy = np.meshgrid(xs, ys, indexing="ij")
                flbs = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1)
                parts.append(self._grid_leaves(flbs, o, sv))
        return LeafSet.concat(parts).dedup()

    # -- insertion ------------------------------------------------------------

    def host_ems(self, box: np.ndarray) -> int:
        idx = _kernels.contained_in(box[None, :], self.ems, self.eps)[0]
        return int(idx)

    def insert(self, item: ItemSpec, leaf: LeafPlacement, mass: float | None = None) -> "PackingTree":
        box = leaf.as_minmax()
        eps = self.eps
        if np.any(box[:3] < -eps) or np.any(box[3:] > np.array(self.bin.size) + eps):
            raise ValueError(f"placement {leaf} leaves the bin")
        if len(self.boxes) and _kernels.overlap_mask(box[None, :], self.boxes, eps)[0]:
            raise ValueError(f"placement {leaf} overlaps a packed item")
        if sorted(leaf.oriented_size) != sorted(item.size) and not np.allclose(
                sorted(leaf.oriented_size), sorted(item.size)):
            raise ValueError("leaf size is not an orientation of the item")
        host = leaf.source_ems if 0 <= leaf.source_ems < len(self.ems) else -1
        if host < 0 or not _inside(box, self.ems[host], eps):
            host = self.host_ems(box)
        node = InternalNode(
            box=leaf.box, density=item.density, category=item.category,
            mass=item.volume * item.density if mass is None else mass,
            host=self.ems[host].copy() if host >= 0 else None,
            parent=int(self.ems_creator[host]) if host >= 0 else -1,
        )
        idx = len(self.internals)
        self.internals.append(node)
        self.boxes = np.vstack([self.boxes, box[None, :]])
        new_ems, origin, inspections = _kernels.ems_insert(self.ems, box, eps)
        creator = np.where(origin >= 0, self.ems_creator[np.maximum(origin, 0)], idx)
        self.ems, self.ems_creator = new_ems, creator.astype(np.int64)
        self.split_inspections = int(inspections)
        if self.scheme in ("CP", "EP"):
            self._update_points(box)
        self.leaves = LeafSet.empty()
        return self

    def _covered(self, p: np.ndarray) -> bool:
        b = self.boxes
        eps = self.eps
        return bool(np.any(np.all((b[:, :3] <= p + eps) & (p < b[:, 3:] - eps), axis=1)))

    def _update_points(self, box: np.ndarray) -> None:
        x0, y0, z0, x1, y1, z1 = box
        new = []
        if self.scheme == "CP":
            new = [(x1, y0, z0), (x0, y1, z0), (x0, y0, z1)]
        else:
            b = self.boxes
            eps = self.eps
            for z in self.z_levels():
                if not (z0 - eps <= z <= z1 + eps):
                    continue
                plane = b[(b[:, 2] <= z + eps) & (b[:, 5] > z + eps)]
                # (x1, y0) projected toward -y, (x0, y1) projected toward -x
                hit = plane[(plane[:, 0] <= x1 + eps) & (x1 < plane[:, 3] - eps) & (plane[:, 4] <= y0 + eps)]
                ya = max([0.0, *hit[:, 4]])
                hit = plane[(plane[:, 1] <= y1 + eps) & (y1 < plane[:, 4] - eps) & (plane[:, 3] <= x0 + eps)]
                xb = max([0.0, *hit[:, 3]])
                new += [(x1, ya, z), (xb, y1, z)]
            new.append((x0, y0, z1))
        size = np.array(self.bin.size)
        pts = []
        seen = set()
        for p in self.points + [tuple(float(v) for v in q) for q in new]:
            arr = np.array(p)
            if p in seen or np.any(arr >= size - self.eps) or self._covered(arr):
                continue
            seen.add(p)
            pts.append(p)
        self.points = pts

    # -- serialization ----------------------------------------------------------

    def to_text(self) -> str:
        s = self.bin.size
        lines = [f"bin 0 0 0 {_f(s.x)} {_f(s.y)} {_f(s.z)} mode={self.bin.mode} "
                 f"grid_step={_f(self.bin.grid_step)} scheme={self.scheme} orientations={len(self.orientations)} "
                 f"stability={int(self.require_stability)}"]
        for n in self.internals:
            b = n.box
            lines.append(f"item {_fv(b.flb)} {_fv(b.size)} density={_f(n.density)} "
                         f"category={n.category} mass={_f(n.mass)} parent={n.parent}")
        for row, c in zip(self.ems, self.ems_creator):
            lines.append(f"ems {_fv(row[:3])} {_fv(row[3:] - row[:3])} creator={int(c)}")
        if self.scheme in ("CP", "EP"):
            for p in self.points:
                lines.append(f"point {_fv(p)} 0 0 0")
        for l in self.leaves:
            lines.append(f"leaf {_fv(l.flb)} {_fv(l.oriented_size)} orientation={l.orientation_index} "
                         f"source={l.source_ems}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PackingTree":
        tree = None
        ems, creators, leaves = [], [], []
        for raw in text.splitlines():
            if not raw.strip():
                continue
            kind, *rest = raw.split()
            nums = [float(v) for v in rest[:6]]
            attrs = dict(kv.split("=", 1) for kv in rest[6:])
            if kind != "bin" and tree is None:
                raise ValueError("the bin record must come first")
            if kind == "bin":
                b = BinSpec(Vec3(*nums[3:]), attrs["mode"], float(attrs["grid_step"]))
                tree = cls(b, attrs["scheme"], int(attrs["orientations"]), attrs.get("stability", "0") == "1")
                tree.points = []
                if tree.scheme not in ("CP", "EP"):
                    tree.points = [(0.0, 0.0, 0.0)]
            elif kind == "item":
                box = Box3(Vec3(*nums[:3]), Vec3(*nums[3:]))
                tree.internals.append(InternalNode(box, float(attrs["density"]), int(attrs["category"]),
                                                   float(attrs["mass"]), parent=int(attrs["parent"])))
                tree.boxes = np.vstack([tree.boxes, box.as_minmax()[None, :]])
            elif kind == "ems":
                ems.append([*nums[:3], *(a + b for a, b in zip(nums[:3], nums[3:]))])
                creators.append(int(attrs["creator"]))
            elif kind == "point":
                tree.points.append(tuple(nums[:3]))
            elif kind == "leaf":
                leaves.append(LeafPlacement(Vec3(*nums[3:]), Vec3(*nums[:3]),
                                            int(attrs["orientation"]), int(attrs["source"])))
            else:
                raise ValueError(f"unknown record kind {kind!r}")
        if tree is None:
            raise ValueError("missing bin record")
        tree.ems = np.array(ems, dtype=np.float64).reshape(-1, 6)
        tree.ems_creator = np.array(creators, dtype=np.int64)
        tree.leaves = LeafSet.from_leaves(leaves)
        return tree


def _f(v: float) -> str:
    return repr(float(v))


def _fv(v) -> str:
    return " ".join(_f(x) for x in v)


def _inside(box: np.ndarray, outer: np.ndarray, eps: float) -> bool:
    return bool(np.all(box[:3] >= outer[:3] - eps) and np.all(box[3:] <= outer[3:] + eps))


def _unique(values: np.ndarray, eps: float) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return v
    keep = np.concatenate([[True], np.diff(v) > max(eps, 0.0)])
    return v[keep]


# -- functional surface --------------------------------------------------------

def new_tree(bin: BinSpec, scheme: str = "EMS", orientations: int = 6, require_stability: bool = False) -> PackingTree:
    return PackingTree(bin, scheme, orientations, require_stability)


def candidates_for(tree: PackingTree, item: ItemSpec) -> LeafSet:
    return tree.candidates_for(item)


def insert(tree: PackingTree, item: ItemSpec, leaf: LeafPlacement) -> PackingTree:
    return tree.insert(item, leaf)


def intercept_leaves(leaves, max_len: int, rng: np.random.Generator):
    """Random subset of at most ``max_len`` leaves, kept in original order."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    idx = intercept_indices(len(leaves), max_len, rng)
    if isinstance(leaves, LeafSet):
        return leaves[idx]
    return [leaves[i] for i in idx]


def intercept_indices(n: int, max_len: int, rng: np.random.Generator) -> np.ndarray:
    if n <= max_len:
        return np.arange(n)
    return np.sort(rng.choice(n, size=max_len, replace=False))
