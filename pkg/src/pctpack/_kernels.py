"""Hot geometric kernels with a numba path and a pure-numpy fallback.

Boxes are passed as ``(n, 6)`` float64 arrays in min/max form
``[x0, y0, z0, x1, y1, z1]``. Set ``PCTPACK_DISABLE_NUMBA=1`` before import to
force the numpy implementations (useful for debugging and for the benchmark).
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("PCTPACK_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in the benchmark
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _overlap_mask_np(cands, boxes, eps):
    if boxes.shape[0] == 0 or cands.shape[0] == 0:
        return np.zeros(cands.shape[0], dtype=np.bool_)
    lo = cands[:, None, :3] < boxes[None, :, 3:] - eps
    hi = boxes[None, :, :3] < cands[:, None, 3:] - eps
    return np.any(np.all(lo & hi, axis=2), axis=1)


def _contained_mask_np(inner, outer, eps):
    """For each row of ``inner``, index of the first row of ``outer`` containing it, else -1."""
    if outer.shape[0] == 0 or inner.shape[0] == 0:
        return np.full(inner.shape[0], -1, dtype=np.int64)
    ok = np.all(inner[:, None, :3] >= outer[None, :, :3] - eps, axis=2)
    ok &= np.all(inner[:, None, 3:] <= outer[None, :, 3:] + eps, axis=2)
    first = np.argmax(ok, axis=1)
    return np.where(ok[np.arange(inner.shape[0]), first], first, -1).astype(np.int64)


def _split_children_np(ems, item, eps):
    touched = np.all(ems[:, :3] < item[3:] - eps, axis=1) & np.all(item[:3] < ems[:, 3:] - eps, axis=1)
    kept = ems[~touched]
    hit = ems[touched]
    parts = []
    for d in range(3):
        left = hit.copy()
        left[:, 3 + d] = item[d]
        parts.append(left[hit[:, d] < item[d] - eps])
        right = hit.copy()
        right[:, d] = item[3 + d]
        parts.append(right[hit[:, 3 + d] > item[3 + d] + eps])
    children = np.concatenate(parts, axis=0) if parts else np.empty((0, 6))
    return kept, children, touched


def _ems_insert_np(ems, item, eps):
    kept, children, touched = _split_children_np(ems, item, eps)
    inspections = ems.shape[0]
    if children.shape[0] == 0:
        return kept, np.flatnonzero(~touched).astype(np.int64), inspections
    # children never dominate a surviving untouched EMS; only children need culling
    dominated = _contained_mask_np(children, kept, eps) >= 0
    inspections += children.shape[0] * kept.shape[0]
    n = children.shape[0]
    inside = np.all(children[:, None, :3] >= children[None, :, :3] - eps, axis=2)
    inside &= np.all(children[:, None, 3:] <= children[None, :, 3:] + eps, axis=2)
    np.fill_diagonal(inside, False)
    # i inside j: drop i unless they are equal and i comes first
    same = inside & inside.T
    later = np.arange(n)[:, None] > np.arange(n)[None, :]
    drop = np.any(inside & (~same | later), axis=1)
    inspections += n * n
    survivors = children[~dominated & ~drop]
    out = np.concatenate([kept, survivors], axis=0)
    origin = np.concatenate([np.flatnonzero(~touched), np.full(survivors.shape[0], -1)]).astype(np.int64)
    return out, origin, inspections


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

@njit(cache=True)
def _overlap_mask_nb(cands, boxes, eps):
    n = cands.shape[0]
    m = boxes.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        for j in range(m):
            hit = True
            for d in range(3):
                if not (cands[i, d] < boxes[j, 3 + d] - eps and boxes[j, d] < cands[i, 3 + d] - eps):
                    hit = False
                    break
            if hit:
                out[i] = True
                break
    return out


@njit(cache=True)
def _inside(a, i, b, j, eps):
    for d in range(3):
        if a[i, d] < b[j, d] - eps or a[i, 3 + d] > b[j, 3 + d] + eps:
            return False
    return True


@njit(cache=True)
def _contained_mask_nb(inner, outer, eps):
    n = inner.shape[0]
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for j in range(outer.shape[0]):
            if _inside(inner, i, outer, j, eps):
                out[i] = j
                break
    return out


@njit(cache=True)
def _ems_insert_nb(ems, item, eps):
    n = ems.shape[0]
    touched = np.zeros(n, dtype=np.bool_)
    n_hit = 0
    for i in range(n):
        hit = True
        for d in range(3):
            if not (ems[i, d] < item[3 + d] - eps and item[d] < ems[i, 3 + d] - eps):
                hit = False
                break
        touched[i] = hit
        if hit:
            n_hit += 1
    inspections = n
    kept = np.empty((n - n_hit, 6))
    origin_kept = np.empty(n - n_hit, dtype=np.int64)
    children = np.empty((6 * n_hit, 6))
    k = 0
    c = 0
    for i in range(n):
        if not touched[i]:
            kept[k] = ems[i]
            origin_kept[k] = i
            k += 1
            continue
        for d in range(3):
            if ems[i, d] < item[d] - eps:
                children[c] = ems[i]
                children[c, 3 + d] = item[d]
                c += 1
            if ems[i, 3 + d] > item[3 + d] + eps:
                children[c] = ems[i]
                children[c, d] = item[3 + d]
                c += 1
    alive = np.ones(c, dtype=np.bool_)
    for i in range(c):
        for j in range(k):
            inspections += 1
            if _inside(children, i, kept, j, eps):
                alive[i] = False
                break
    for i in range(c):
        if not alive[i]:
            continue
        for j in range(c):
            if i == j:
                continue
            inspections += 1
            if _inside(children, i, children, j, eps):
                if _inside(children, j, children, i, eps):
                    # duplicates: keep the first live copy
                    if j < i and alive[j]:
                        alive[i] = False
                        break
                else:
                    alive[i] = False
                    break
    n_alive = 0
    for i in range(c):
        if alive[i]:
            n_alive += 1
    out = np.empty((k + n_alive, 6))
    origin = np.full(k + n_alive, -1, dtype=np.int64)
    out[:k] = kept
    origin[:k] = origin_kept
    r = k
    for i in range(c):
        if alive[i]:
            out[r] = children[i]
            r += 1
    return out, origin, inspections


@njit(cache=True)
def _grid_heights_nb(boxes, res_x, res_y, cell):
    hm = np.zeros((res_x, res_y))
    for b in range(boxes.shape[0]):
        i0 = int(np.floor(boxes[b, 0] / cell + 1e-9))
        i1 = int(np.ceil(boxes[b, 3] / cell - 1e-9))
        j0 = int(np.floor(boxes[b, 1] / cell + 1e-9))
        j1 = int(np.ceil(boxes[b, 4] / cell - 1e-9))
        top = boxes[b, 5]
        for i in range(max(i0, 0), min(i1, res_x)):
            for j in range(max(j0, 0), min(j1, res_y)):
                if hm[i, j] < top:
                    hm[i, j] = top
    return hm


def _grid_heights_np(boxes, res_x, res_y, cell):
    hm = np.zeros((res_x, res_y))
    for b in boxes:
        i0 = max(int(np.floor(b[0] / cell + 1e-9)), 0)
        i1 = min(int(np.ceil(b[3] / cell - 1e-9)), res_x)
        j0 = max(int(np.floor(b[1] / cell + 1e-9)), 0)
        j1 = min(int(np.ceil(b[4] / cell - 1e-9)), res_y)
        np.maximum(hm[i0:i1, j0:j1], b[5], out=hm[i0:i1, j0:j1])
    return hm


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _overlap_mask = _overlap_mask_nb
    _contained_mask = _contained_mask_nb
    _ems_insert = _ems_insert_nb
    _grid_heights = _grid_heights_nb
else:
    _overlap_mask = _overlap_mask_np
    _contained_mask = _contained_mask_np
    _ems_insert = _ems_insert_np
    _grid_heights = _grid_heights_np


def overlap_mask(cands: np.ndarray, boxes: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Boolean mask: which candidate boxes overlap (open interiors) any of ``boxes``."""
    return _overlap_mask(np.ascontiguousarray(cands, dtype=np.float64),
                         np.ascontiguousarray(boxes, dtype=np.float64), float(eps))


def contained_in(inner: np.ndarray, outer: np.ndarray, eps: float = 0.0) -> np.ndarray:
    return _contained_mask(np.ascontiguousarray(inner, dtype=np.float64),
                           np.ascontiguousarray(outer, dtype=np.float64), float(eps))


def ems_insert(ems: np.ndarray, item: np.ndarray, eps: float = 0.0):
    """Subtract ``item`` from every EMS it cuts and cull non-maximal children.

    Returns ``(new_ems, origin, inspections)`` where ``origin[i]`` is the index
    of the untouched source EMS or -1 for a freshly split child.
    """
    return _ems_insert(np.ascontiguousarray(ems, dtype=np.float64),
                       np.ascontiguousarray(item, dtype=np.float64), float(eps))


def grid_heights(boxes: np.ndarray, res_x: int, res_y: int, cell: float) -> np.ndarray:
    return _grid_heights(np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 6),
                         int(res_x), int(res_y), float(cell))
