"""Experiment plumbing: item-sequence files, episode runners, metrics and reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import dump_config, env_config, env_to_kv
from .env import EnvConfig, PackingEnv
from .geometry import Vec3
from .heuristics import HEURISTICS, heuristic_policy
from .tree import ItemSpec

SEQUENCE_FORMAT = "pctpack-sequences/1"


# -- sequence files -------------------------------------------------------------------------

def generate_sequences(config: EnvConfig, count: int, length: int, seed: int = 0) -> list[list[ItemSpec]]:
    """``count`` item sequences of ``length`` items; sequence ``i`` uses the stream of seed ``seed + i``."""
    out = []
    for i in range(count):
        env = PackingEnv(config, seed + i)
        seq = [env.item]
        while len(seq) < length:
            seq.append(env._draw())
        out.append(seq)
    return out


def _item_record(seq: int, t: int, item: ItemSpec) -> dict:
    return {"seq": seq, "t": t, "size": [float(v) for v in item.size], "density": float(item.density),
            "category": int(item.category)}


def write_sequences(path, config: EnvConfig, sequences: list[list[ItemSpec]], seed: int) -> str:
    """Write one JSON record per line (header first); returns the file's digest."""
    lines = [json.dumps({"format": SEQUENCE_FORMAT, "seed": seed, "count": len(sequences),
                         "config": dump_config(env_to_kv(config))}, sort_keys=True)]
    for i, seq in enumerate(sequences):
        lines.extend(json.dumps(_item_record(i, t, it), sort_keys=True) for t, it in enumerate(seq))
    data = ("\n".join(lines) + "\n").encode()
    Path(path).write_bytes(data)
    return hashlib.sha1(data).hexdigest()


@dataclass
class SequenceFile:
    config: EnvConfig
    sequences: list[list[ItemSpec]]
    seed: int
    digest: str


def read_sequences(path) -> SequenceFile:
    data = Path(path).read_bytes()
    lines = data.decode().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty sequence file")
    head = json.loads(lines[0])
    if head.get("format") != SEQUENCE_FORMAT:
        raise ValueError(f"{path}: not a sequence file")
    from .config import parse_config

    cfg = env_config(parse_config(head["config"]))
    seqs: list[list[ItemSpec]] = [[] for _ in range(int(head["count"]))]
    for ln in lines[1:]:
        if not ln.strip():
            continue
        r = json.loads(ln)
        seqs[r["seq"]].append(ItemSpec(Vec3(*r["size"]), r["density"], r["category"]))
    return SequenceFile(cfg, seqs, int(head["seed"]), hashlib.sha1(data).hexdigest())


def config_digest(config: EnvConfig, seeds) -> str:
    """Identity of an on-the-fly item source (config plus seeds)."""
    text = dump_config(env_to_kv(config)) + ",".join(str(int(s)) for s in seeds)
    return "seeds:" + hashlib.sha1(text.encode()).hexdigest()


# -- episodes ---------------------------------------------------------------------------------

@dataclass
class EpisodeRow:
    method: str
    episode: int
    seed: int
    utilization: float
    items: int
    decisions: int
    seconds: float

    @property
    def time_per_decision(self) -> float:
        return self.seconds / self.decisions if self.decisions else 0.0


def _load_method(method: str, config: EnvConfig):
    """``DBL``/``OnlineBPH``/``LSAH``/``HM``/``Random`` or ``pct:<checkpoint>``."""
    if method in HEURISTICS:
        return "heuristic", heuristic_policy(method)
    if method.startswith("pct:"):
        from .policy import Descriptor, load_checkpoint

        pol, _ = load_checkpoint(method[4:], Descriptor.for_config(config))
        return "policy", pol
    raise ValueError(f"unknown method {method!r}")


def run_online_episode(method: str, config: EnvConfig, seed: int, episode: int = 0,
                       sequence=None, loaded=None) -> EpisodeRow:
    from .policy import act

    kind, obj = loaded if loaded is not None else _load_method(method, config)
    env = PackingEnv(config, seed, sequence)
    rng = np.random.default_rng([seed, 5])
    elapsed = 0.0
    decisions = 0
    while not env.done:
        t0 = time.perf_counter()
        if kind == "heuristic":
            a = obj(env.tree, env.leaves, rng)
        else:
            a = act(env, obj, "argmax", rng)
        env.step(a)
        # each decision is timed from the previous placement to this one
        elapsed += time.perf_counter() - t0
        decisions += 1
    return EpisodeRow(method, episode, seed, env.utilization, env.n_packed, decisions, elapsed)


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("PCTPACK_WORKERS", "1")))
    except ValueError:
        return 1


def _job(args):
    method, config, seed, episode, sequence = args
    return run_online_episode(method, config, seed, episode, sequence)


def run_experiment(methods: list[str], config: EnvConfig, seeds, sequences=None) -> list[EpisodeRow]:
    """Every method on every seed (or sequence); rows are ordered by method, then episode."""
    seeds = [int(s) for s in seeds]
    if sequences is not None and len(sequences) < len(seeds):
        raise ValueError("fewer sequences than episodes")
    for m in methods:  # fail on bad methods or checkpoints before any episode runs
        _load_method(m, config)
    jobs = [(m, config, s, i, None if sequences is None else sequences[i])
            for m in methods for i, s in enumerate(seeds)]
    workers = _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_job, jobs))
    loaded = {m: _load_method(m, config) for m in methods}
    return [run_online_episode(m, c, s, i, q, loaded[m]) for m, c, s, i, q in jobs]


# -- metrics ----------------------------------------------------------------------------------

@dataclass
class MetricRow:
    method: str
    uti: float
    var: float  # population variance of utilisation, x 1e3
    num: float
    gap: float
    time: float  # seconds per decision
    episodes: int
    source: str = ""


def summarize(method: str, utils, nums, seconds_per_decision, source: str = "") -> MetricRow:
    u = np.asarray(utils, dtype=float)
    if not len(u):
        raise ValueError(f"no episodes for {method}")
    return MetricRow(method, float(u.mean()), float(u.var() * 1e3), float(np.mean(nums)), 0.0,
                     float(np.mean(seconds_per_decision)), len(u), source)


def with_gaps(rows: list[MetricRow]) -> list[MetricRow]:
    if not rows:
        raise ValueError("empty result set")
    best = max(r.uti for r in rows)
    out = []
    for r in rows:
        gap = (best - r.uti) / best if best > 0 else 0.0
        out.append(MetricRow(r.method, r.uti, r.var, r.num, max(gap, 0.0), r.time, r.episodes, r.source))
    return out


def metrics_from_episodes(episodes: list[EpisodeRow], source: str = "") -> list[MetricRow]:
    by: dict[str, list[EpisodeRow]] = {}
    for e in episodes:
        by.setdefault(e.method, []).append(e)
    rows = [summarize(m, [e.utilization for e in es], [e.items for e in es],
                      [e.time_per_decision for e in es], source) for m, es in by.items()]
    return with_gaps(rows)


@dataclass
class ResultSet:
    source: str  # sequence-file digest or on-the-fly identity
    rows: list[MetricRow]
    episodes: list[EpisodeRow] = field(default_factory=list)


def report(*results: ResultSet) -> list[MetricRow]:
    """Merge result sets from one item source and recompute gaps."""
    if not results:
        raise ValueError("nothing to report")
    sources = {r.source for r in results}
    if len(sources) > 1:
        raise ValueError("refusing to compare results from different sequence files: " + ", ".join(sorted(sources)))
    rows = [row for r in results for row in r.rows]
    return with_gaps(rows)


def format_table(rows: list[MetricRow]) -> str:
    w = max([len("Method")] + [len(r.method) for r in rows]) + 2
    head = f"{'Method':<{w}}{'Uti.':>8}{'Var.':>8}{'Num.':>8}{'Gap':>8}{'Time(ms)':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.method:<{w}}{100 * r.uti:>7.1f}%{r.var:>8.2f}{r.num:>8.1f}{100 * r.gap:>7.1f}%"
                     f"{1e3 * r.time:>10.2f}")
    return "\n".join(lines)


def rows_to_csv(rows) -> str:
    rows = list(rows)
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(asdict(rows[0]).keys()), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(asdict(r))
    return buf.getvalue()


def rows_to_json(rows) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2, sort_keys=True)


def write_results(out_prefix, rows: list[MetricRow], episodes: list | None = None) -> list[Path]:
    """``<prefix>.csv``, ``<prefix>.json`` and, with episodes, ``<prefix>.episodes.csv``."""
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    paths = [prefix.with_suffix(".csv"), prefix.with_suffix(".json")]
    paths[0].write_text(rows_to_csv(rows))
    paths[1].write_text(rows_to_json(rows))
    if episodes:
        p = prefix.parent / (prefix.name + ".episodes.csv")
        p.write_text(rows_to_csv(episodes))
        paths.append(p)
    return paths
