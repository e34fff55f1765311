"""Brute-force reference implementations used by tests and ``pctpack verify``.

Each oracle is written independently of the code it checks: voxels instead of
box splitting, dense grids instead of event coordinates, plain loops instead
of the vectorised network.
"""
from __future__ import annotations

import math

import numpy as np


# -- maximal empty boxes on a voxel grid --------------------------------------

def occupancy(boxes: np.ndarray, dims: tuple[int, int, int]) -> np.ndarray:
    occ = np.zeros(dims, dtype=np.int64)
    for b in np.asarray(boxes, dtype=np.int64).reshape(-1, 6):
        occ[b[0]:b[3], b[1]:b[4], b[2]:b[5]] = 1
    return occ


def _summed(occ: np.ndarray) -> np.ndarray:
    s = np.zeros(tuple(d + 1 for d in occ.shape), dtype=np.int64)
    s[1:, 1:, 1:] = occ.cumsum(0).cumsum(1).cumsum(2)
    return s


def _box_sum(s, x0, y0, z0, x1, y1, z1):
    return (s[x1, y1, z1] - s[x0, y1, z1] - s[x1, y0, z1] - s[x1, y1, z0]
            + s[x0, y0, z1] + s[x0, y1, z0] + s[x1, y0, z0] - s[x0, y0, z0])


def _ranges(n: int) -> np.ndarray:
    return np.array([(a, b) for a in range(n) for b in range(a + 1, n + 1)], dtype=np.int64)


def maximal_empty_boxes(boxes: np.ndarray, dims: tuple[int, int, int]) -> set[tuple[int, ...]]:
    """All inclusion-maximal empty integer boxes of a voxelised bin, as min/max tuples."""
    occ = occupancy(boxes, dims)
    s = _summed(occ)
    X, Y, Z = dims
    rx, ry = _ranges(X), _ranges(Y)
    # every x-range x y-range rectangle, then its maximal empty z-runs
    ix, iy = np.meshgrid(np.arange(len(rx)), np.arange(len(ry)), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    x0, x1 = rx[ix, 0], rx[ix, 1]
    y0, y1 = ry[iy, 0], ry[iy, 1]
    zs = np.arange(Z)
    # occupied voxels of each rectangle, layer by layer: (rect, z)
    filled = _box_sum(s, x0[:, None], y0[:, None], zs[None, :], x1[:, None], y1[:, None], zs[None, :] + 1)
    empty = filled == 0
    nxt = np.full((len(x0), Z + 1), Z, dtype=np.int64)  # first filled layer at or above z
    for z in range(Z - 1, -1, -1):
        nxt[:, z] = np.where(empty[:, z], nxt[:, z + 1], z)
    start = empty & np.concatenate([np.ones((len(x0), 1), bool), ~empty[:, :-1]], axis=1)
    r, z0 = np.nonzero(start)
    z1 = nxt[r, z0]
    a, b, c, d = x0[r], x1[r], y0[r], y1[r]
    keep = np.ones(len(r), dtype=bool)
    # z-runs are maximal already; each side must hit the wall or a filled voxel
    keep &= (a == 0) | (_box_sum(s, np.maximum(a - 1, 0), c, z0, a, d, z1) > 0)
    keep &= (b == X) | (_box_sum(s, b, c, z0, np.minimum(b + 1, X), d, z1) > 0)
    keep &= (c == 0) | (_box_sum(s, a, np.maximum(c - 1, 0), z0, b, c, z1) > 0)
    keep &= (d == Y) | (_box_sum(s, a, d, z0, b, np.minimum(d + 1, Y), z1) > 0)
    rows = np.stack([a, c, z0, b, d, z1], axis=1)[keep]
    return {tuple(int(v) for v in row) for row in rows}


def ems_as_set(ems: np.ndarray) -> set[tuple[int, ...]]:
    return {tuple(int(round(v)) for v in row) for row in np.asarray(ems).reshape(-1, 6)}


# -- feasible placements on a dense grid ------------------------------------------

def feasible_grid(boxes: np.ndarray, bin_size, size, z: float, step: float = 0.5):
    """Sample ``[0, S - size]`` on a grid and mark positions that avoid every box."""
    sx, sy, sz = size
    xs = np.arange(0.0, bin_size[0] - sx + 1e-12, step)
    ys = np.arange(0.0, bin_size[1] - sy + 1e-12, step)
    ok = np.ones((len(xs), len(ys)), dtype=bool)
    for b in np.asarray(boxes, dtype=np.float64).reshape(-1, 6):
        if not (b[2] < z + sz and z < b[5]):
            continue
        bx = (xs[:, None] < b[3]) & (b[0] < xs[:, None] + sx)
        by = (ys[None, :] < b[4]) & (b[1] < ys[None, :] + sy)
        ok &= ~(bx & by)
    return xs, ys, ok


def brute_convex_vertices(bin_size, size, boxes, z: float, step: float = 0.5) -> list[tuple[float, float]]:
    """Extreme points of the feasible set sampled on a half-unit lattice.

    A feasible lattice point is a vertex when no line through it continues in
    both directions inside the set, i.e. no opposite pair of its eight
    neighbours is feasible. With integer data every corner lies on the lattice
    and feasibility is constant inside each open half-cell, so the sampled
    answer is exact.
    """
    xs, ys, ok = feasible_grid(boxes, bin_size, size, z, step)
    nx, ny = ok.shape
    pad = np.zeros((nx + 2, ny + 2), dtype=bool)
    pad[1:-1, 1:-1] = ok
    out = []
    for i, j in zip(*np.nonzero(ok)):
        pi, pj = i + 1, j + 1
        through = any(pad[pi + dx, pj + dy] and pad[pi - dx, pj - dy]
                      for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)))
        if not through:
            out.append((float(xs[i]), float(ys[j])))
    return out


# -- stability --------------------------------------------------------------------

def hull_contains(points: np.ndarray, p) -> bool:
    """Strict interior membership using scipy's Qhull."""
    from scipy.spatial import ConvexHull, QhullError

    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) < 3:
        return False
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return False  # collinear contacts have no interior
    # equations: normal . x + offset <= 0 inside
    vals = hull.equations[:, :2] @ np.asarray(p, dtype=np.float64) + hull.equations[:, 2]
    return bool(np.all(vals < -1e-12))


def support_stable(boxes: np.ndarray, masses: np.ndarray, tol: float = 0.0) -> bool:
    """Whole-stack quasi-static check written with plain loops.

    Every item off the floor must have the resultant of its own weight and the
    loads it carries strictly inside the hull of its contact rectangles; loads
    pass to supporters in proportion to contact area, acting at each contact's
    centre.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 6)
    n = len(boxes)
    supports = []
    for i in range(n):
        rows = []
        for j in range(n):
            if j == i or abs(boxes[j][5] - boxes[i][2]) > tol:
                continue
            x0, x1 = max(boxes[i][0], boxes[j][0]), min(boxes[i][3], boxes[j][3])
            y0, y1 = max(boxes[i][1], boxes[j][1]), min(boxes[i][4], boxes[j][4])
            if x1 - x0 > tol and y1 - y0 > tol:
                rows.append((j, x0, x1, y0, y1))
        supports.append(rows)
    load = [float(m) for m in masses]
    mx = [float(m) * 0.5 * (b[0] + b[3]) for m, b in zip(masses, boxes)]
    my = [float(m) * 0.5 * (b[1] + b[4]) for m, b in zip(masses, boxes)]
    for i in sorted(range(n), key=lambda k: -boxes[k][2]):
        if boxes[i][2] <= tol:
            continue
        rows = supports[i]
        if not rows:
            return False
        corners = [(x, y) for _, x0, x1, y0, y1 in rows for x in (x0, x1) for y in (y0, y1)]
        if not hull_contains(np.array(corners), (mx[i] / load[i], my[i] / load[i])):
            return False
        total = sum((x1 - x0) * (y1 - y0) for _, x0, x1, y0, y1 in rows)
        for j, x0, x1, y0, y1 in rows:
            f = load[i] * (x1 - x0) * (y1 - y0) / total
            load[j] += f
            mx[j] += f * 0.5 * (x0 + x1)
            my[j] += f * 0.5 * (y0 + y1)
    return True


# -- numerics --------------------------------------------------------------------

def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences (``x`` is restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


# -- attention / pointer ------------------------------------------------------------

def dense_policy(params, internal, internal_mask, leaves, leaf_mask, item,
                 clip: float = 10.0, leaky: float = 0.01):
    """Masked, loop-based evaluation of the attention policy on padded inputs.

    Returns (log-probabilities per padded leaf slot, -inf where masked; value).
    """
    P = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def act(x):
        return x if x > 0 else leaky * x

    def embed(x, pre):
        hid = [act(float(np.dot(x, P[f"{pre}_w1"][:, j]) + P[f"{pre}_b1"][j]))
               for j in range(P[f"{pre}_w1"].shape[1])]
        return np.array(hid) @ P[f"{pre}_w2"] + P[f"{pre}_b2"]

    rows, valid = [], []
    for x, ok in zip(internal, internal_mask):
        rows.append(embed(x, "b"))
        valid.append(bool(ok))
    n_int = len(rows)
    for x, ok in zip(leaves, leaf_mask):
        rows.append(embed(x, "l"))
        valid.append(bool(ok))
    for x in np.atleast_2d(item):
        rows.append(embed(x, "n"))
        valid.append(True)
    H = np.array(rows)
    d = H.shape[1]
    Q, K, V = H @ P["wq"], H @ P["wk"], H @ P["wv"]
    out = np.zeros_like(H)
    for i in range(len(H)):
        if not valid[i]:
            continue
        logits = np.array([float(Q[i] @ K[j]) / math.sqrt(d) if valid[j] else -np.inf for j in range(len(H))])
        w = np.exp(logits - logits[np.isfinite(logits)].max())
        w /= w.sum()
        ctx = sum(w[j] * V[j] for j in range(len(H)) if valid[j])
        h1 = H[i] + ctx @ P["wo"]
        ff = np.maximum(h1 @ P["f_w1"] + P["f_b1"], 0.0) @ P["f_w2"] + P["f_b2"]
        out[i] = h1 + ff
    live = [i for i in range(len(H)) if valid[i]]
    hbar = sum(out[i] for i in live) / len(live)
    q = hbar @ P["p_wq"]
    z = np.full(len(leaves), -np.inf)
    for s in range(len(leaves)):
        if valid[n_int + s]:
            z[s] = clip * math.tanh(float((out[n_int + s] @ P["p_wk"]) @ q) / math.sqrt(d))
    m = z[np.isfinite(z)].max()
    logp = z - (m + math.log(np.sum(np.exp(z[np.isfinite(z)] - m))))
    hid = np.array([act(v) for v in hbar @ P["c_w1"] + P["c_b1"]])
    value = float((hid @ P["c_w2"] + P["c_b2"])[0])
    return logp, value
