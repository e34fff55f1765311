"""Graph-attention pointer policy and critic over packing-tree nodes (pure numpy).

One state is processed at a time on its eligible rows only, so padding can
never leak into the result. Gradients are written out by hand; see
``backward``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .tree import LeafSet, PackingTree, ItemSpec

D = 64
C_CLIP = 10.0
LEAKY = 0.01
MAX_INTERNAL = 80
LEAVES_PER_ORIENTATION = 25


# -- descriptors --------------------------------------------------------------------

@dataclass(frozen=True)
class Descriptor:
    """Column layout of node descriptors for a given setting/constraint."""

    density: bool = False
    category: bool = False

    @property
    def internal_width(self) -> int:
        return 6 + self.density + self.category

    @property
    def leaf_width(self) -> int:
        return 6

    @property
    def item_width(self) -> int:
        return 3 + self.density + self.category

    @classmethod
    def for_config(cls, config) -> "Descriptor":
        return cls(density=config.setting == 3, category=config.constraint == "isle")


def describe_arrays(bin_size, boxes: np.ndarray, density: np.ndarray, category: np.ndarray,
                    item: ItemSpec, leaves: LeafSet, desc: Descriptor):
    """Normalised descriptor rows (internal, leaf, item) from raw min/max boxes."""
    S = np.asarray(bin_size, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 6)
    xb = np.concatenate([boxes[:, :3] / S, (boxes[:, 3:] - boxes[:, :3]) / S], axis=1)
    xi = np.asarray(item.size, dtype=np.float64)[None, :] / S
    if desc.density:
        xb = np.concatenate([xb, np.asarray(density, dtype=np.float64).reshape(-1, 1)], axis=1)
        xi = np.concatenate([xi, [[item.density]]], axis=1)
    if desc.category:
        xb = np.concatenate([xb, np.asarray(category, dtype=np.float64).reshape(-1, 1)], axis=1)
        xi = np.concatenate([xi, [[float(item.category)]]], axis=1)
    xl = np.concatenate([leaves.flb / S, leaves.size / S], axis=1)
    return xb, xl, xi


def describe(tree: PackingTree, item: ItemSpec, leaves: LeafSet, desc: Descriptor):
    """Normalised descriptor rows (internal, leaf, item) for one state."""
    dens = [n.density for n in tree.internals]
    cats = [n.category for n in tree.internals]
    return describe_arrays(tree.bin.size, tree.boxes, dens, cats, item, leaves, desc)


@dataclass
class NodeFeatures:
    """Padded node matrices with validity masks (``True`` = eligible)."""

    internal: np.ndarray
    internal_mask: np.ndarray
    leaves: np.ndarray
    leaf_mask: np.ndarray
    item: np.ndarray

    @property
    def eligible(self):
        return self.internal[self.internal_mask], self.leaves[self.leaf_mask], self.item


def embed_state(tree: PackingTree, item: ItemSpec, leaves: LeafSet, desc: Descriptor,
                max_internal: int = MAX_INTERNAL, max_leaves: int | None = None) -> NodeFeatures:
    """Descriptors padded to fixed lengths; the most recent internal nodes are kept if there are too many."""
    xb, xl, xi = describe(tree, item, leaves, desc)
    if max_leaves is None:
        max_leaves = LEAVES_PER_ORIENTATION * len(tree.orientations)
    if len(xl) > max_leaves:
        raise ValueError(f"{len(xl)} leaves exceed the padded length {max_leaves}; intercept first")
    xb = xb[-max_internal:] if max_internal > 0 else xb[:0]
    pb = np.zeros((max_internal, desc.internal_width))
    pb[:len(xb)] = xb
    mb = np.zeros(max_internal, dtype=bool)
    mb[:len(xb)] = True
    pl = np.zeros((max_leaves, 6))
    pl[:len(xl)] = xl
    ml = np.zeros(max_leaves, dtype=bool)
    ml[:len(xl)] = True
    return NodeFeatures(pb, mb, pl, ml, xi)


# -- parameters ------------------------------------------------------------------------

PARAM_ORDER = (
    "b_w1", "b_b1", "b_w2", "b_b2",
    "l_w1", "l_b1", "l_w2", "l_b2",
    "n_w1", "n_b1", "n_w2", "n_b2",
    "wq", "wk", "wv", "wo",
    "f_w1", "f_b1", "f_w2", "f_b2",
    "p_wq", "p_wk",
    "c_w1", "c_b1", "c_w2", "c_b2",
)


def param_shapes(desc: Descriptor, d: int = D) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for pre, width in (("b", desc.internal_width), ("l", desc.leaf_width), ("n", desc.item_width)):
        shapes.update({f"{pre}_w1": (width, d), f"{pre}_b1": (d,), f"{pre}_w2": (d, d), f"{pre}_b2": (d,)})
    shapes.update({"wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
                   "f_w1": (d, d), "f_b1": (d,), "f_w2": (d, d), "f_b2": (d,),
                   "p_wq": (d, d), "p_wk": (d, d),
                   "c_w1": (d, d), "c_b1": (d,), "c_w2": (d, 1), "c_b2": (1,)})
    return shapes


def init_params(desc: Descriptor, rng: np.random.Generator, d: int = D) -> dict[str, np.ndarray]:
    """Uniform in +-1/sqrt(fan_in); biases use their layer's fan-in."""
    params = {}
    shapes = param_shapes(desc, d)
    for name in PARAM_ORDER:
        shape = shapes[name]
        if len(shape) == 2:
            fan_in = shape[0]
        else:
            fan_in = shapes[name.replace("_b", "_w")][0]
        bound = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zeros_like(params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


# -- forward ------------------------------------------------------------------------------

def _leaky(x):
    return np.where(x > 0, x, LEAKY * x)


def _mlp2(x, w1, b1, w2, b2):
    a = x @ w1 + b1
    h = _leaky(a)
    return h @ w2 + b2, (x, a, h)


def _softmax_rows(s):
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=1, keepdims=True)


def gat_block(h0: np.ndarray, p: Mapping[str, np.ndarray]):
    """One single-head attention layer plus feed-forward, both with skip connections."""
    q, k, v = h0 @ p["wq"], h0 @ p["wk"], h0 @ p["wv"]
    s = (q @ k.T) / math.sqrt(q.shape[1])
    a = _softmax_rows(s)
    c = a @ v
    h1 = h0 + c @ p["wo"]
    f = h1 @ p["f_w1"] + p["f_b1"]
    r = np.maximum(f, 0.0)
    h2 = h1 + r @ p["f_w2"] + p["f_b2"]
    return h2, (h0, q, k, v, a, c, h1, f, r)


def pointer_logits(h2: np.ndarray, leaf_rows: slice, p: Mapping[str, np.ndarray]):
    """Clipped compatibility logits and log-probabilities over the leaf rows."""
    hbar = h2.mean(axis=0)
    q = hbar @ p["p_wq"]
    kl = h2[leaf_rows] @ p["p_wk"]
    u = kl @ q / math.sqrt(q.shape[0])
    t = np.tanh(u)
    z = C_CLIP * t
    m = z.max()
    logp = z - (m + math.log(np.exp(z - m).sum()))
    return logp, (hbar, q, kl, t)


def critic_value(hbar: np.ndarray, p: Mapping[str, np.ndarray]):
    a = hbar @ p["c_w1"] + p["c_b1"]
    h = _leaky(a)
    return float((h @ p["c_w2"] + p["c_b2"])[0]), (a, h)


@dataclass
class Forward:
    logp: np.ndarray
    value: float
    cache: tuple

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.logp)


def forward(p: Mapping[str, np.ndarray], xb: np.ndarray, xl: np.ndarray, xi: np.ndarray) -> Forward:
    """Policy log-probabilities over ``xl`` rows and state value, eligible rows only."""
    if len(xl) == 0:
        raise ValueError("no eligible leaf: terminal state")
    if xb.shape[1] != p["b_w1"].shape[0] or xl.shape[1] != p["l_w1"].shape[0] or xi.shape[1] != p["n_w1"].shape[0]:
        raise ValueError("descriptor width does not match the parameters")
    eb, cb = _mlp2(xb, p["b_w1"], p["b_b1"], p["b_w2"], p["b_b2"])
    el, cl = _mlp2(xl, p["l_w1"], p["l_b1"], p["l_w2"], p["l_b2"])
    en, cn = _mlp2(xi, p["n_w1"], p["n_b1"], p["n_w2"], p["n_b2"])
    h0 = np.concatenate([eb, el, en], axis=0)
    nb, nl = len(xb), len(xl)
    h2, cg = gat_block(h0, p)
    leaf_rows = slice(nb, nb + nl)
    logp, cp = pointer_logits(h2, leaf_rows, p)
    value, cc = critic_value(cp[0], p)
    return Forward(logp, value, (nb, nl, cb, cl, cn, h2, cg, cp, cc))


def forward_features(p, feats: NodeFeatures) -> Forward:
    return forward(p, *feats.eligible)


# -- backward ------------------------------------------------------------------------------

def _mlp2_backward(g_out, cache, w1, w2, grads, pre):
    x, a, h = cache
    grads[f"{pre}_w2"] += h.T @ g_out
    grads[f"{pre}_b2"] += g_out.sum(axis=0)
    ga = (g_out @ w2.T) * np.where(a > 0, 1.0, LEAKY)
    grads[f"{pre}_w1"] += x.T @ ga
    grads[f"{pre}_b1"] += ga.sum(axis=0)


def backward(p: Mapping[str, np.ndarray], fwd: Forward, g_logp: np.ndarray, g_value: float,
             grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Accumulate into ``grads`` the gradient of ``g_logp . logp + g_value * V``."""
    nb, nl, cb, cl, cn, h2, cg, cp, cc = fwd.cache
    h0, q, k, v, a, c, h1, f, r = cg
    hbar, pq, kl, t = cp
    ca, ch = cc
    d = h2.shape[1]
    n = h2.shape[0]
    probs = np.exp(fwd.logp)
    # log-softmax then clip
    gz = g_logp - probs * g_logp.sum()
    gu = gz * C_CLIP * (1.0 - t * t)
    scale = 1.0 / math.sqrt(d)
    gq = kl.T @ gu * scale
    gkl = np.outer(gu, pq) * scale
    gh2 = np.zeros_like(h2)
    grads["p_wk"] += h2[nb:nb + nl].T @ gkl
    gh2[nb:nb + nl] += gkl @ p["p_wk"].T
    grads["p_wq"] += np.outer(hbar, gq)
    ghbar = p["p_wq"] @ gq
    # critic
    gv = np.array([g_value])
    grads["c_w2"] += np.outer(ch, gv)
    grads["c_b2"] += gv
    gca = (p["c_w2"] @ gv) * np.where(ca > 0, 1.0, LEAKY)
    grads["c_w1"] += np.outer(hbar, gca)
    grads["c_b1"] += gca
    ghbar = ghbar + p["c_w1"] @ gca
    gh2 += ghbar / n
    # feed-forward with skip
    grads["f_w2"] += r.T @ gh2
    grads["f_b2"] += gh2.sum(axis=0)
    gf = (gh2 @ p["f_w2"].T) * (f > 0)
    grads["f_w1"] += h1.T @ gf
    grads["f_b1"] += gf.sum(axis=0)
    gh1 = gh2 + gf @ p["f_w1"].T
    # attention with skip
    grads["wo"] += c.T @ gh1
    gc = gh1 @ p["wo"].T
    ga = gc @ v.T
    gvv = a.T @ gc
    gs = a * (ga - np.sum(ga * a, axis=1, keepdims=True)) * scale
    gqq = gs @ k
    gkk = gs.T @ q
    grads["wq"] += h0.T @ gqq
    grads["wk"] += h0.T @ gkk
    grads["wv"] += h0.T @ gvv
    gh0 = gh1 + gqq @ p["wq"].T + gkk @ p["wk"].T + gvv @ p["wv"].T
    _mlp2_backward(gh0[:nb], cb, p["b_w1"], p["b_w2"], grads, "b")
    _mlp2_backward(gh0[nb:nb + nl], cl, p["l_w1"], p["l_w2"], grads, "l")
    _mlp2_backward(gh0[nb + nl:], cn, p["n_w1"], p["n_w2"], grads, "n")
    return grads


def loss_terms(fwd: Forward, action: int, advantage: float, target: float, alpha: float = 1.0,
               beta: float = 1.0, entropy: float = 0.0):
    """Composite loss and its gradients with respect to (logp, V).

    The advantage and the critic target are constants. Minimising
    ``-advantage * log pi(a)`` is gradient ascent on the return.
    """
    logp = fwd.logp
    probs = np.exp(logp)
    ent = -float(np.sum(probs * logp))
    loss = -alpha * advantage * logp[action] + beta * (target - fwd.value) ** 2 - entropy * ent
    g_logp = np.zeros_like(logp)
    g_logp[action] = -alpha * advantage
    if entropy:
        # d(-H)/d logp_i = p_i (logp_i + 1); the log-softmax backward removes the constant
        g_logp += entropy * probs * (logp + 1.0)
    g_value = -2.0 * beta * (target - fwd.value)
    return loss, g_logp, g_value


# -- acting -----------------------------------------------------------------------------

class Policy:
    """Parameters plus the descriptor layout they were built for."""

    def __init__(self, params: dict[str, np.ndarray], desc: Descriptor):
        self.params = params
        self.desc = desc

    @classmethod
    def create(cls, desc: Descriptor, seed: int = 0) -> "Policy":
        return cls(init_params(desc, np.random.default_rng(seed)), desc)

    def evaluate(self, tree: PackingTree, item: ItemSpec, leaves: LeafSet) -> Forward:
        return forward(self.params, *describe(tree, item, leaves, self.desc))

    def value(self, tree: PackingTree, item: ItemSpec | None, leaves: LeafSet) -> float:
        """Critic estimate; 0 for terminal states."""
        if item is None or len(leaves) == 0:
            return 0.0
        return self.evaluate(tree, item, leaves).value

    def choose(self, tree: PackingTree, leaves: LeafSet, rng=None, item: ItemSpec | None = None,
               mode: str = "argmax") -> int:
        return act_on(self, tree, item, leaves, mode, rng)


def act_on(policy: Policy, tree, item, leaves, mode: str = "argmax", rng=None) -> int:
    if len(leaves) == 1:
        return 0
    fwd = policy.evaluate(tree, item, leaves)
    if mode == "argmax":
        return int(np.argmax(fwd.logp))
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    rng = rng if rng is not None else np.random.default_rng()
    return sample_index(fwd.probs, rng)


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    c = np.cumsum(probs)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(probs) - 1))


def act(env, policy: Policy, mode: str = "argmax", rng=None) -> int:
    """Action index for an environment's current state."""
    return act_on(policy, env.tree, env.item, env.leaves, mode, rng)


# -- checkpoints --------------------------------------------------------------------------

MAGIC = b"PCTPACK1"


def save_checkpoint(path, policy: Policy, meta: Mapping[str, str] | None = None) -> None:
    """Binary container: magic, metadata, then (name, shape, float64 data) records."""
    meta = dict(meta or {})
    meta["density"] = str(int(policy.desc.density))
    meta["category"] = str(int(policy.desc.category))
    meta["d"] = str(policy.params["wq"].shape[0])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        for k, v in sorted(meta.items()):
            for s in (k, v):
                b = s.encode()
                fh.write(struct.pack("<I", len(b)) + b)
        fh.write(struct.pack("<I", len(policy.params)))
        for name in PARAM_ORDER:
            arr = np.ascontiguousarray(policy.params[name], dtype="<f8")
            b = name.encode()
            fh.write(struct.pack("<I", len(b)) + b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path, expect: Descriptor | None = None) -> tuple[Policy, dict[str, str]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    def text():
        nonlocal pos
        (n,) = take("<I")
        s = data[pos:pos + n].decode()
        pos += n
        return s

    meta = {}
    (nmeta,) = take("<I")
    for _ in range(nmeta):
        k = text()
        meta[k] = text()
    desc = Descriptor(bool(int(meta.get("density", "0"))), bool(int(meta.get("category", "0"))))
    if expect is not None and expect != desc:
        raise ValueError(f"checkpoint descriptor {desc} does not match the configuration {expect}")
    shapes = param_shapes(desc, int(meta.get("d", D)))
    params = {}
    (count,) = take("<I")
    for _ in range(count):
        name = text()
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        if name not in shapes or tuple(shape) != shapes[name]:
            raise ValueError(f"checkpoint tensor {name} has shape {shape}, expected {shapes.get(name)}")
        size = int(np.prod(shape)) * 8
        params[name] = np.frombuffer(data, dtype="<f8", count=int(np.prod(shape)), offset=pos).reshape(shape).copy()
        pos += size
    missing = set(PARAM_ORDER) - set(params)
    if missing:
        raise ValueError(f"checkpoint is missing tensors {sorted(missing)}")
    return Policy(params, desc), meta
