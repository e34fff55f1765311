"""Quasi-static support checks and analytic load propagation.

Model: an item is stable when it stands on the floor, or when the resultant
of everything it carries (its own weight at its center plus loads handed down
from above at contact centroids) projects strictly inside the convex hull of
its contact rectangles. Loads split among supporters in proportion to
contact area.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .geometry import Box3

CONTACT_TOL = 1e-6


@dataclass
class SupportReport:
    stable: bool
    support_ratio: float
    contact_set: list[tuple[int, tuple[float, float, float, float]]] = field(default_factory=list)


def _tol(tree) -> float:
    return 0.0 if tree.bin.mode == "discrete" else CONTACT_TOL


def contacts_below(boxes: np.ndarray, box: np.ndarray, tol: float) -> list[tuple[int, tuple[float, float, float, float]]]:
    """Items whose top face touches the bottom of ``box``, with their contact rectangles."""
    if not len(boxes):
        return []
    touch = np.abs(boxes[:, 5] - box[2]) <= tol
    x0 = np.maximum(boxes[:, 0], box[0])
    x1 = np.minimum(boxes[:, 3], box[3])
    y0 = np.maximum(boxes[:, 1], box[1])
    y1 = np.minimum(boxes[:, 4], box[4])
    ok = touch & (x1 - x0 > tol) & (y1 - y0 > tol)
    return [(int(i), (float(x0[i]), float(x1[i]), float(y0[i]), float(y1[i]))) for i in np.flatnonzero(ok)]


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull via the monotone chain."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def strictly_inside(hull: np.ndarray, p: tuple[float, float], tol: float = 1e-12) -> bool:
    if len(hull) < 3:
        return False
    for i in range(len(hull)):
        a, b = hull[i], hull[(i + 1) % len(hull)]
        if (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) <= tol:
            return False
    return True


def _rect_corners(rects) -> np.ndarray:
    return np.array([(x, y) for x0, x1, y0, y1 in rects for x in (x0, x1) for y in (y0, y1)])


def _balanced(rects, point, on_floor: bool) -> bool:
    if on_floor:
        return True
    if not rects:
        return False
    return strictly_inside(convex_hull(_rect_corners(rects)), point)


def check_stable(tree, placement: Box3, mass: float) -> SupportReport:
    box = placement.as_minmax()
    tol = _tol(tree)
    area = (box[3] - box[0]) * (box[4] - box[1])
    masses = np.array([n.mass for n in tree.internals] + [mass], dtype=np.float64)
    boxes = np.vstack([tree.boxes, box[None, :]])
    contacts = contacts_below(tree.boxes, box, tol)
    covered = sum((x1 - x0) * (y1 - y0) for _, (x0, x1, y0, y1) in contacts)
    ratio = 1.0 if box[2] <= tol else (min(1.0, covered / area) if area > 0 else 0.0)
    if _under_existing(tree.boxes, box, tol):
        # the item slides under packed ones and takes a share of their load
        return SupportReport(_stack_balanced(boxes, masses, tol), ratio, contacts)
    if box[2] <= tol:
        return SupportReport(True, 1.0, [])
    center = (0.5 * (box[0] + box[3]), 0.5 * (box[1] + box[4]))
    if not _balanced([r for _, r in contacts], center, False):
        return SupportReport(False, ratio, contacts)
    ok = _ancestors_balanced(boxes, masses, len(boxes) - 1, tol)
    return SupportReport(ok, ratio, contacts)


def _under_existing(boxes: np.ndarray, box: np.ndarray, tol: float) -> bool:
    """Does a packed item rest its bottom face on the top of ``box``?"""
    if not len(boxes):
        return False
    touch = np.abs(boxes[:, 2] - box[5]) <= tol
    ox = np.minimum(boxes[:, 3], box[3]) - np.maximum(boxes[:, 0], box[0])
    oy = np.minimum(boxes[:, 4], box[4]) - np.maximum(boxes[:, 1], box[1])
    return bool(np.any(touch & (ox > tol) & (oy > tol)))


def _stack_balanced(boxes: np.ndarray, masses: np.ndarray, tol: float) -> bool:
    """Every item off the floor balanced, with loads from the whole stack."""
    graph = _support_graph(boxes, tol)
    load, moment = _propagate(boxes, masses, graph)
    for i in range(len(boxes)):
        if boxes[i, 2] <= tol:
            continue
        point = (moment[i, 0] / load[i], moment[i, 1] / load[i])
        if not _balanced([r for _, r in graph[i]], point, False):
            return False
    return True


def _support_graph(boxes: np.ndarray, tol: float):
    return [contacts_below(boxes, boxes[i], tol) for i in range(len(boxes))]


def _ancestors_balanced(boxes: np.ndarray, masses: np.ndarray, new: int, tol: float) -> bool:
    graph = _support_graph(boxes, tol)
    # support ancestors of the new item
    anc = set()
    stack = [new]
    while stack:
        i = stack.pop()
        for j, _ in graph[i]:
            if j not in anc:
                anc.add(j)
                stack.append(j)
    if not anc:
        return True
    load, moment = _propagate(boxes, masses, graph)
    for i in anc:
        if boxes[i, 2] <= tol:
            continue
        point = (moment[i, 0] / load[i], moment[i, 1] / load[i])
        if not _balanced([r for _, r in graph[i]], point, False):
            return False
    return True


def _propagate(boxes: np.ndarray, masses: np.ndarray, graph):
    """Float load totals and first moments (x, y) per item, top-down."""
    load = masses.astype(np.float64).copy()
    centers = 0.5 * (boxes[:, :2] + boxes[:, 3:5])
    moment = centers * masses[:, None]
    for i in np.argsort(-boxes[:, 2], kind="stable"):
        sup = graph[i]
        if not sup:
            continue
        areas = np.array([(x1 - x0) * (y1 - y0) for _, (x0, x1, y0, y1) in sup])
        share = load[i] * areas / areas.sum()
        for (j, (x0, x1, y0, y1)), f in zip(sup, share):
            load[j] += f
            moment[j] += f * np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1)])
    return load, moment


@dataclass
class BearingReport:
    loads: np.ndarray  # total load each item carries, own mass included
    floor_load: Fraction
    total_mass: Fraction
    exact_loads: list[Fraction]


def bearing_forces(tree) -> BearingReport:
    """Area-proportional load transmission down the support graph, in exact arithmetic."""
    boxes = tree.boxes
    tol = _tol(tree)
    graph = _support_graph(boxes, tol)
    masses = [Fraction(float(n.mass)) for n in tree.internals]
    load = list(masses)
    floor = Fraction(0)
    for i in np.argsort(-boxes[:, 2], kind="stable") if len(boxes) else []:
        sup = graph[i]
        if not sup:
            floor += load[i]  # floor items and unsupported residue
            continue
        areas = [(Fraction(x1) - Fraction(x0)) * (Fraction(y1) - Fraction(y0)) for _, (x0, x1, y0, y1) in sup]
        total = sum(areas)
        for (j, _), a in zip(sup, areas):
            load[j] += load[i] * a / total
    return BearingReport(np.array([float(v) for v in load]), floor, sum(masses, Fraction(0)), load)


def _support_state(tree):
    """Support graph, per-item support hulls and current loads; cached until the next insert."""
    n = len(tree.boxes)
    cached = getattr(tree, "_support_cache", None)
    if cached is not None and cached[0] == n and cached[1] is tree.boxes:
        return cached
    tol = _tol(tree)
    graph = _support_graph(tree.boxes, tol)
    hulls = [convex_hull(_rect_corners([r for _, r in g])) if g else None for g in graph]
    masses = np.array([nd.mass for nd in tree.internals], dtype=np.float64)
    load, moment = _propagate(tree.boxes, masses, graph) if n else (np.zeros(0), np.zeros((0, 2)))
    cached = (n, tree.boxes, graph, hulls, load, moment)
    tree._support_cache = cached
    return cached


def stable_mask(tree, cands: np.ndarray, mass: float) -> np.ndarray:
    """Vectorised :func:`check_stable` over min/max candidate rows.

    The support graph of already packed items does not change when a new item
    lands on top, so only the new item's load needs pushing down its ancestors.
    Candidates that slide under a packed item get the whole-stack check.
    """
    cands = np.asarray(cands, dtype=np.float64).reshape(-1, 6)
    tol = _tol(tree)
    out = cands[:, 2] <= tol
    if not len(tree.boxes):
        return out
    _, boxes, graph, hulls, load, moment = _support_state(tree)
    order = np.argsort(-boxes[:, 2], kind="stable")
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    masses = None
    for c in range(len(cands)):
        box = cands[c]
        if _under_existing(boxes, box, tol):
            # rare: the item fills a cavity and shares the load of items above
            if masses is None:
                masses = np.array([n.mass for n in tree.internals] + [mass], dtype=np.float64)
            out[c] = _stack_balanced(np.vstack([boxes, box[None, :]]), masses, tol)
            continue
        if out[c]:
            continue
        contacts = contacts_below(boxes, box, tol)
        if not contacts:
            continue
        center = (0.5 * (box[0] + box[3]), 0.5 * (box[1] + box[4]))
        if not _balanced([r for _, r in contacts], center, False):
            continue
        out[c] = _delta_balanced(boxes, graph, hulls, load, moment, rank, contacts, mass, tol)
    return out


def _delta_balanced(boxes, graph, hulls, load, moment, rank, contacts, mass, tol) -> bool:
    dl: dict[int, float] = {}
    dm: dict[int, np.ndarray] = {}

    def push(sup, amount):
        areas = np.array([(x1 - x0) * (y1 - y0) for _, (x0, x1, y0, y1) in sup])
        share = amount * areas / areas.sum()
        for (j, (x0, x1, y0, y1)), f in zip(sup, share):
            dl[j] = dl.get(j, 0.0) + f
            dm[j] = dm.get(j, np.zeros(2)) + f * np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1)])

    push(contacts, mass)
    done = set()
    while True:
        pending = [j for j in dl if j not in done]
        if not pending:
            break
        # highest item first so each node forwards its full increment once
        i = min(pending, key=lambda j: rank[j])
        done.add(i)
        if boxes[i, 2] <= tol:
            continue
        total = load[i] + dl[i]
        point = (moment[i] + dm[i]) / total
        hull = hulls[i]
        if hull is None or not strictly_inside(hull, (point[0], point[1])):
            return False
        push(graph[i], dl[i])
    return True
