"""Axis-aligned box geometry and the planar feasible-region analysis.

Positions are Front-Left-Bottom (FLB) corners. Touching faces never count as
overlap. Discrete bins compare exactly; continuous bins use ``EPS``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _kernels

EPS = 1e-9


class Vec3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class Box3:
    flb: Vec3
    size: Vec3

    def __post_init__(self):
        object.__setattr__(self, "flb", Vec3(*self.flb))
        object.__setattr__(self, "size", Vec3(*self.size))
        if not all(math.isfinite(v) for v in (*self.flb, *self.size)):
            raise ValueError(f"non-finite box {self}")
        if min(self.size) <= 0:
            raise ValueError(f"box sizes must be positive, got {tuple(self.size)}")

    @property
    def end(self) -> Vec3:
        return Vec3(*(p + s for p, s in zip(self.flb, self.size)))

    @property
    def volume(self) -> float:
        return self.size.x * self.size.y * self.size.z

    def as_minmax(self) -> np.ndarray:
        return np.array([*self.flb, *self.end], dtype=np.float64)

    @classmethod
    def from_minmax(cls, row: Sequence[float]) -> "Box3":
        return cls(Vec3(row[0], row[1], row[2]), Vec3(row[3] - row[0], row[4] - row[1], row[5] - row[2]))


@dataclass(frozen=True)
class BinSpec:
    size: Vec3
    mode: str = "discrete"
    grid_step: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "size", Vec3(*(float(v) for v in self.size)))
        object.__setattr__(self, "grid_step", float(self.grid_step))
        if self.mode not in ("discrete", "continuous"):
            raise ValueError(f"unknown bin mode {self.mode!r}")
        if min(self.size) <= 0 or not all(math.isfinite(v) for v in self.size):
            raise ValueError(f"bin sizes must be positive, got {tuple(self.size)}")
        if self.mode == "discrete":
            for v in self.size:
                q = v / self.grid_step
                if abs(q - round(q)) > 1e-12:
                    raise ValueError(f"grid step {self.grid_step} does not divide bin size {v}")

    @property
    def eps(self) -> float:
        return 0.0 if self.mode == "discrete" else EPS

    @property
    def volume(self) -> float:
        return self.size.x * self.size.y * self.size.z

    def as_box(self) -> Box3:
        return Box3(Vec3(0, 0, 0), self.size)


def overlaps(a: Box3, b: Box3, eps: float = 0.0) -> bool:
    """True iff the open interiors intersect; face or edge contact is allowed."""
    for d in range(3):
        if not (a.flb[d] < b.flb[d] + b.size[d] - eps and b.flb[d] < a.flb[d] + a.size[d] - eps):
            return False
    return True


def contains(bin: BinSpec, b: Box3) -> bool:
    e = bin.eps
    return all(-e <= b.flb[d] <= bin.size[d] - b.size[d] + e for d in range(3))


def intersect(a: Box3, b: Box3, eps: float = 0.0) -> Box3 | None:
    lo = [max(a.flb[d], b.flb[d]) for d in range(3)]
    hi = [min(a.flb[d] + a.size[d], b.flb[d] + b.size[d]) for d in range(3)]
    if any(h - l <= eps for l, h in zip(lo, hi)):
        return None
    return Box3(Vec3(*lo), Vec3(*(h - l for l, h in zip(lo, hi))))


def boxes_to_array(boxes: Iterable[Box3]) -> np.ndarray:
    rows = [b.as_minmax() for b in boxes]
    return np.array(rows, dtype=np.float64).reshape(-1, 6)


# ---------------------------------------------------------------------------
# height map
# ---------------------------------------------------------------------------

@dataclass
class Heightmap:
    """Top heights over a rectangular partition of the bin floor.

    ``heights[i, j]`` covers ``[x_edges[i], x_edges[i+1]] x [y_edges[j], y_edges[j+1]]``.
    Discrete bins use the unit grid; continuous bins use the patches induced
    by the box edges.
    """

    x_edges: np.ndarray
    y_edges: np.ndarray
    heights: np.ndarray

    @property
    def cell_areas(self) -> np.ndarray:
        return np.outer(np.diff(self.x_edges), np.diff(self.y_edges))

    def variance(self) -> float:
        w = self.cell_areas
        w = w / w.sum()
        mean = float((w * self.heights).sum())
        return float((w * (self.heights - mean) ** 2).sum())

    def max_under(self, x0: float, x1: float, y0: float, y1: float, eps: float = EPS) -> float:
        i = (self.x_edges[:-1] < x1 - eps) & (self.x_edges[1:] > x0 + eps)
        j = (self.y_edges[:-1] < y1 - eps) & (self.y_edges[1:] > y0 + eps)
        sub = self.heights[np.ix_(i, j)]
        return float(sub.max()) if sub.size else 0.0


def heightmap(packed: Sequence[Box3] | np.ndarray, bin: BinSpec) -> Heightmap:
    arr = packed if isinstance(packed, np.ndarray) else boxes_to_array(packed)
    arr = arr.reshape(-1, 6)
    if bin.mode == "discrete":
        nx = int(round(bin.size.x / bin.grid_step))
        ny = int(round(bin.size.y / bin.grid_step))
        hm = _kernels.grid_heights(arr, nx, ny, bin.grid_step)
        return Heightmap(np.arange(nx + 1) * bin.grid_step, np.arange(ny + 1) * bin.grid_step, hm)
    xs = _snap(np.concatenate([[0.0, bin.size.x], arr[:, 0], arr[:, 3]]))
    ys = _snap(np.concatenate([[0.0, bin.size.y], arr[:, 1], arr[:, 4]]))
    hm = np.zeros((len(xs) - 1, len(ys) - 1))
    for b in arr:
        i = (xs[:-1] < b[3] - EPS) & (xs[1:] > b[0] + EPS)
        j = (ys[:-1] < b[4] - EPS) & (ys[1:] > b[1] + EPS)
        blk = np.ix_(i, j)
        hm[blk] = np.maximum(hm[blk], b[5])
    return Heightmap(xs, ys, hm)


def _snap(values: np.ndarray, tol: float = EPS) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return v
    keep = np.concatenate([[True], np.diff(v) > tol])
    return v[keep]


# ---------------------------------------------------------------------------
# planar feasible regions (no-fit complement) and their convex vertices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RectRegion2:
    """Closed planar region stored as canonical horizontal slabs.

    Each rectangle is ``(x0, x1, y0, y1)`` and closed. Slabs are ordered by
    ``y0`` then ``x0``; interiors are pairwise disjoint. Degenerate slabs
    (``y0 == y1`` or ``x0 == x1``) keep tight fits that only a line or point
    of positions admits.
    """

    rects: tuple[tuple[float, float, float, float], ...] = ()
    tol: float = 0.0

    @property
    def empty(self) -> bool:
        return not self.rects

    def contains_point(self, x: float, y: float) -> bool:
        t = self.tol
        return any(x0 - t <= x <= x1 + t and y0 - t <= y <= y1 + t for x0, x1, y0, y1 in self.rects)

    def area(self) -> float:
        return sum((x1 - x0) * (y1 - y0) for x0, x1, y0, y1 in self.rects)


class PlaneVertex(NamedTuple):
    position: tuple[float, float]
    interior_angle: float
    tightness: float


def _closed_minus_open(lo: float, hi: float, cuts: list[tuple[float, float]], tol: float):
    """[lo, hi] minus a union of open intervals (a, b): sorted closed pieces, maybe points."""
    if hi < lo - tol:
        return []
    pieces = [(lo, hi)]
    for a, b in cuts:
        nxt = []
        for p, q in pieces:
            if b <= p + tol or a >= q - tol:
                nxt.append((p, q))
                continue
            if a >= p - tol:
                nxt.append((p, max(p, min(a, q))))
            if b <= q + tol:
                nxt.append((min(q, max(b, p)), q))
        pieces = nxt
    pieces.sort()
    merged: list[tuple[float, float]] = []
    for p, q in pieces:
        if merged and p <= merged[-1][1] + tol:
            merged[-1] = (merged[-1][0], max(merged[-1][1], q))
        else:
            merged.append((p, q))
    return merged


def region_from_cuts(width: float, height: float, cuts: Sequence[tuple[float, float, float, float]],
                     tol: float = 0.0) -> RectRegion2:
    """Canonical form of ``[0, width] x [0, height]`` minus open rectangles ``(x0, x1, y0, y1)``."""
    if width < -tol or height < -tol:
        return RectRegion2((), tol)
    width = max(width, 0.0)
    height = max(height, 0.0)
    ys = [0.0, height]
    for _, _, y0, y1 in cuts:
        for v in (y0, y1):
            if -tol <= v <= height + tol:
                ys.append(min(max(v, 0.0), height))
    ys = list(_snap(np.array(ys), max(tol, 1e-15)))

    rows = []  # (y0, y1, intervals)
    for i, y in enumerate(ys):
        rows.append((y, y, tuple(_strict_section(cuts, y, y, width, tol))))
        if i + 1 < len(ys):
            rows.append((y, ys[i + 1], tuple(_strict_section(cuts, y, ys[i + 1], width, tol))))
    # merge equal neighbours (open rows absorb their boundary lines when identical)
    merged: list[list] = []
    for y0, y1, iv in rows:
        if merged and merged[-1][2] == iv and abs(merged[-1][1] - y0) <= tol:
            merged[-1][1] = y1
        else:
            merged.append([y0, y1, iv])
    rects = []
    for k, (y0, y1, iv) in enumerate(merged):
        if y0 == y1:
            # a boundary line only adds points that its closed neighbours lack
            nb = []
            for j in (k - 1, k + 1):
                if 0 <= j < len(merged) and merged[j][0] != merged[j][1]:
                    nb.extend(merged[j][2])
            if all(any(a - tol <= p and q <= b + tol for a, b in nb) for p, q in iv):
                continue
        for x0, x1 in iv:
            rects.append((x0, x1, y0, y1))
    rects.sort(key=lambda r: (r[2], r[0], r[3], r[1]))
    return RectRegion2(tuple(rects), tol)


def _strict_section(cuts, y_lo: float, y_hi: float, width: float, tol: float):
    """Cross-section of the region over a row: a line (y_lo == y_hi) or an open band."""
    if y_lo == y_hi:
        active = [(x0, x1) for x0, x1, c0, c1 in cuts if c0 < y_lo - tol and c1 > y_lo + tol]
    else:
        active = [(x0, x1) for x0, x1, c0, c1 in cuts if c0 < y_hi - tol and c1 > y_lo + tol]
    return _closed_minus_open(0.0, width, active, tol)


def feasible_region(plane_z: float, footprint: tuple[float, float], obstacles: Sequence[Box3] | np.ndarray,
                    bin: BinSpec, height: float | None = None) -> RectRegion2:
    """FLB positions in the plane ``z = plane_z`` where the footprint fits.

    With ``height`` given, obstacles are the boxes meeting the open slab
    ``(plane_z, plane_z + height)``; otherwise those whose vertical span
    covers the plane.
    """
    tol = bin.eps
    fx, fy = footprint
    if fx <= 0 or fy <= 0:
        raise ValueError("footprint must be positive")
    w = bin.size.x - fx
    h = bin.size.y - fy
    if w < -tol or h < -tol:
        return RectRegion2((), tol)
    if height is not None and plane_z + height > bin.size.z + tol:
        return RectRegion2((), tol)
    arr = obstacles if isinstance(obstacles, np.ndarray) else boxes_to_array(obstacles)
    arr = arr.reshape(-1, 6)
    if height is None:
        sel = (arr[:, 2] <= plane_z + tol) & (arr[:, 5] > plane_z + tol)
    else:
        sel = (arr[:, 2] < plane_z + height - tol) & (arr[:, 5] > plane_z + tol)
    cuts = [(b[0] - fx, b[3], b[1] - fy, b[4]) for b in arr[sel]]
    return region_from_cuts(w, h, cuts, tol)


_DIRS = {
    "E": (1, 0), "N": (0, 1), "W": (-1, 0), "S": (0, -1),
    "NE": (1, 1), "NW": (-1, 1), "SW": (-1, -1), "SE": (1, -1),
}
# each closed quadrant as the three probe directions it spans
_QUADRANTS = (("E", "NE", "N"), ("N", "NW", "W"), ("W", "SW", "S"), ("S", "SE", "E"))


def _probe_radius(region: RectRegion2) -> float:
    xs = _snap(np.array([v for r in region.rects for v in r[:2]]), max(region.tol, 1e-12))
    ys = _snap(np.array([v for r in region.rects for v in r[2:]]), max(region.tol, 1e-12))
    gaps = np.concatenate([np.diff(xs), np.diff(ys)])
    gaps = gaps[gaps > max(region.tol, 1e-12)]
    return 0.25 * float(gaps.min()) if gaps.size else 0.25


def classify_point(region: RectRegion2, x: float, y: float, radius: float) -> tuple[float, float] | None:
    """Return ``(interior_angle, tightness)`` for a region point, ``None`` if outside.

    Tightness follows the normal-cone span: ``pi - angle`` at convex corners,
    0 on straight edges, interior points and concave corners; ends of
    zero-width pieces and isolated points get ``pi``.
    """
    if not region.contains_point(x, y):
        return None
    occ = {k for k, (dx, dy) in _DIRS.items() if region.contains_point(x + radius * dx, y + radius * dy)}
    diag = {k for k in occ if len(k) == 2}
    axis = occ - diag
    if len(diag) == 4:
        return (2 * math.pi, 0.0)
    if len(diag) == 3:
        return (1.5 * math.pi, 0.0)
    if len(diag) == 2 and not axis and diag in ({"NE", "SW"}, {"NW", "SE"}):
        return (0.5 * math.pi, 0.5 * math.pi)  # pinch: convex in each component
    for quad in _QUADRANTS:
        if occ <= set(quad):
            if diag:
                return (0.5 * math.pi, 0.5 * math.pi)
            if len(axis) == 2:
                return (0.5 * math.pi, 0.5 * math.pi)
            return (0.0, math.pi)
    return (math.pi, 0.0)


def convex_vertices(region: RectRegion2) -> list[PlaneVertex]:
    if region.empty:
        return []
    r = _probe_radius(region)
    pts = sorted({(x, y) for x0, x1, y0, y1 in region.rects for x in (x0, x1) for y in (y0, y1)})
    out = []
    for x, y in pts:
        c = classify_point(region, x, y, r)
        if c is not None and c[1] > 0:
            out.append(PlaneVertex((x, y), c[0], c[1]))
    return out


def tightness(region: RectRegion2, x: float, y: float, radius: float) -> float:
    c = classify_point(region, x, y, radius)
    return 0.0 if c is None else c[1]
