"""Rule-based baseline policies that pick a leaf from the current candidate set."""
from __future__ import annotations

import numpy as np

from .tree import LeafSet, PackingTree

HEURISTICS = ("DBL", "OnlineBPH", "LSAH", "HM", "Random")


def dbl_order(flb: np.ndarray) -> np.ndarray:
    """Indices sorted deepest-bottom-left: lowest z, then y, then x; stable on ties."""
    flb = np.asarray(flb).reshape(-1, 3)
    return np.lexsort((flb[:, 0], flb[:, 1], flb[:, 2]))


def _first(keys: list[np.ndarray]) -> int:
    """Lowest index among rows minimising the lexicographic ``keys`` (primary key first)."""
    order = np.lexsort(tuple(reversed(keys)))
    return int(order[0])


def dbl(tree: PackingTree, leaves: LeafSet) -> int:
    f = leaves.flb
    return _first([f[:, 2], f[:, 1], f[:, 0], np.arange(len(f))])


def online_bph(tree: PackingTree, leaves: LeafSet) -> int:
    """Walk empty spaces in DBL order and take the first one the item fits at its corner."""
    src = leaves.source
    ems_flb = np.full((len(leaves), 3), np.inf)
    ok = src >= 0
    ems_flb[ok] = tree.ems[src[ok], :3]
    # the corner placement of a space is the one whose FLB equals the space's FLB
    corner = ok & np.all(np.abs(leaves.flb - ems_flb) <= tree.eps, axis=1)
    if not corner.any():
        return dbl(tree, leaves)
    idx = np.flatnonzero(corner)
    e = ems_flb[idx]
    k = _first([e[:, 2], e[:, 1], e[:, 0], leaves.orient[idx], idx])
    return int(idx[k])


def _bbox_surface(tree: PackingTree, leaves: LeafSet) -> np.ndarray:
    mm = leaves.minmax()
    if len(tree.boxes):
        lo = np.minimum(mm[:, :3], tree.boxes[:, :3].min(axis=0))
        hi = np.maximum(mm[:, 3:], tree.boxes[:, 3:].max(axis=0))
    else:
        lo, hi = mm[:, :3], mm[:, 3:]
    d = hi - lo
    return 2.0 * (d[:, 0] * d[:, 1] + d[:, 1] * d[:, 2] + d[:, 0] * d[:, 2])


def lsah(tree: PackingTree, leaves: LeafSet) -> int:
    """Least surface area of the packed stack's bounding box after placement (approximate)."""
    sa = np.round(_bbox_surface(tree, leaves), 9)
    f = leaves.flb
    return _first([sa, f[:, 2], f[:, 1], f[:, 0], np.arange(len(f))])


def _hm_grid(tree: PackingTree):
    S = tree.bin.size
    if tree.bin.mode == "discrete":
        nx, ny = int(round(S.x / tree.bin.grid_step)), int(round(S.y / tree.bin.grid_step))
    else:
        nx = ny = 50
    xe = np.linspace(0.0, S.x, nx + 1)
    ye = np.linspace(0.0, S.y, ny + 1)
    h = np.zeros((nx, ny))
    for b in tree.boxes:
        ox = (np.minimum(xe[1:], b[3]) - np.maximum(xe[:-1], b[0])) > 1e-12
        oy = (np.minimum(ye[1:], b[4]) - np.maximum(ye[:-1], b[1])) > 1e-12
        sub = h[np.ix_(ox, oy)]
        h[np.ix_(ox, oy)] = np.maximum(sub, b[5])
    return xe, ye, h


def hm(tree: PackingTree, leaves: LeafSet) -> int:
    """Minimise the growth of the volume seen from the loading direction (top-down heightmap)."""
    xe, ye, h = _hm_grid(tree)
    ax = np.diff(xe)
    ay = np.diff(ye)
    mm = leaves.minmax()
    inc = np.empty(len(leaves))
    for k, b in enumerate(mm):
        ox = np.clip(np.minimum(xe[1:], b[3]) - np.maximum(xe[:-1], b[0]), 0, None)
        oy = np.clip(np.minimum(ye[1:], b[4]) - np.maximum(ye[:-1], b[1]), 0, None)
        w = np.outer(ox > 1e-12, oy > 1e-12)
        inc[k] = np.sum(np.maximum(0.0, b[5] - h) * w * np.outer(ax, ay))
    f = leaves.flb
    return _first([np.round(inc, 9), f[:, 2], f[:, 1], f[:, 0], np.arange(len(f))])


def heuristic_policy(kind: str):
    """Return ``choose(tree, leaves, rng) -> index`` for a named heuristic."""
    if kind == "Random":
        return lambda tree, leaves, rng=None: int((rng or np.random.default_rng()).integers(len(leaves)))
    table = {"DBL": dbl, "OnlineBPH": online_bph, "LSAH": lsah, "HM": hm}
    if kind not in table:
        raise ValueError(f"unknown heuristic {kind!r}; expected one of {HEURISTICS}")
    fn = table[kind]
    return lambda tree, leaves, rng=None: fn(tree, leaves)
