"""``pctpack`` command line.

Exit codes: 0 success, 1 usage or input error, 2 verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import bench
from .config import ConfigError, env_config, load_config, parse_config, planner_config, training_config

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(text: str, kind=str) -> list:
    return [kind(v) for v in text.split(",") if v.strip()]


def _settings(args) -> dict[str, str]:
    kv = load_config(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        kv.update(parse_config(f"{k.strip()} = {v.strip()}"))
    return kv


def _seeds(args) -> list[int]:
    return list(range(args.seed, args.seed + args.episodes))


def _emit(rows, args, episodes=None) -> None:
    fmt = getattr(args, "format", "text")
    if fmt == "csv":
        print(bench.rows_to_csv(rows), end="")
    elif fmt == "json":
        print(bench.rows_to_json(rows))
    else:
        print(bench.format_table(rows))
    if getattr(args, "out", None):
        for p in bench.write_results(args.out, rows, episodes):
            print(f"wrote {p}", file=sys.stderr)


def _load_policy(path, env):
    from .policy import Descriptor, load_checkpoint

    try:
        pol, _ = load_checkpoint(path, Descriptor.for_config(env))
    except (OSError, ValueError) as e:
        raise UsageError(f"cannot load checkpoint {path}: {e}") from e
    return pol


# -- subcommands ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = env_config(_settings(args))
    seqs = bench.generate_sequences(cfg, args.count, args.length, args.seed)
    digest = bench.write_sequences(args.out, cfg, seqs, args.seed)
    print(f"wrote {args.count} sequences of {args.length} items to {args.out} (sha1 {digest})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .policy import save_checkpoint
    from .training import train, write_curve

    kv = _settings(args)
    env = env_config(kv)
    tkw = {}
    if args.minutes is not None:
        tkw["time_limit"] = 60.0 * args.minutes
    if args.updates is not None:
        tkw["updates"] = args.updates
    if not tkw and "time_limit" not in kv and "updates" not in kv:
        raise UsageError("give --minutes or --updates")
    cfg = training_config(kv, env, **tkw)

    def report(update, policy, row):
        if update % args.log_every == 0:
            print(f"update {update} mean_uti {row.mean_uti:.4f} loss {row.loss:.4f} "
                  f"episodes {row.episodes} t {row.seconds:.0f}s", file=sys.stderr)

    policy, curve = train(cfg, callback=report)
    save_checkpoint(args.out, policy, {"updates": str(len(curve))})
    if args.curve:
        write_curve(args.curve, curve)
    print(f"wrote checkpoint {args.out} after {len(curve)} updates")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.merge:
        sets = []
        for path in args.merge:
            data = json.loads(Path(path).read_text())
            rows = [bench.MetricRow(**r) for r in data]
            srcs = {r.source for r in rows}
            if len(srcs) != 1:
                raise UsageError(f"{path} mixes item sources")
            sets.append(bench.ResultSet(srcs.pop(), rows))
        try:
            rows = bench.report(*sets)
        except ValueError as e:
            raise UsageError(str(e)) from e
        _emit(rows, args)
        return EXIT_OK
    if not args.methods:
        raise UsageError("give --methods or --merge")
    methods = _csv_list(args.methods)
    if args.sequences:
        sf = bench.read_sequences(args.sequences)
        cfg, seqs, source = sf.config, sf.sequences, sf.digest
        n = min(args.episodes, len(seqs)) if args.episodes else len(seqs)
        seeds = list(range(sf.seed, sf.seed + n))
        seqs = seqs[:n]
    else:
        cfg = env_config(_settings(args))
        seeds, seqs = _seeds(args), None
        source = bench.config_digest(cfg, seeds)
    try:
        eps = bench.run_experiment(methods, cfg, seeds, seqs)
    except ValueError as e:
        raise UsageError(str(e)) from e
    _emit(bench.metrics_from_episodes(eps, source), args, eps)
    return EXIT_OK


def _planner_source(args, env):
    from .topplan import PolicySource, RuleSource

    if args.checkpoint:
        return PolicySource(_load_policy(args.checkpoint, env))
    return RuleSource(args.heuristic)


def cmd_plan(args) -> int:
    from .topplan import Planner, execute_path, plan_offline, run_variant

    kv = _settings(args)
    env = env_config(kv)
    pcfg = planner_config(kv)
    if args.m is not None:
        pcfg = replace(pcfg, m=args.m)
    if args.value is not None:
        pcfg = replace(pcfg, value=args.value)
    if args.no_cache:
        pcfg = replace(pcfg, use_cache=False)
    src = _planner_source(args, env)
    if pcfg.value == "critic" and not args.checkpoint:
        raise UsageError("the critic value source needs --checkpoint")
    label = f"ToP s={args.s} p={args.p}"
    eps = []
    for seed in _seeds(args):
        if args.offline:
            items = bench.generate_sequences(env, 1, args.offline, seed)[0]
            t0 = time.perf_counter()
            path = plan_offline(env.new_tree(), items, src, pcfg, np.random.default_rng(seed))
            tree = env.new_tree()
            if path is not None:
                execute_path(tree, items, path)
            n = len(tree.internals)
            eps.append(bench.EpisodeRow(f"ToP offline |I|={args.offline}", seed - args.seed, seed,
                                        tree.utilization(), n, max(n, 1), time.perf_counter() - t0))
        else:
            r = run_variant(env, args.s, args.p, src, seed=seed, planner=Planner(src, pcfg))
            eps.append(bench.EpisodeRow(label, seed - args.seed, seed, r.utilization, r.items, r.decisions,
                                        r.seconds))
    _emit(bench.metrics_from_episodes(eps, bench.config_digest(env, _seeds(args))), args, eps)
    return EXIT_OK


def cmd_bench_large(args) -> int:
    from .recursive import INTEGRATORS, HeuristicSource, NetworkSource, large_scale_config, run_large_scale

    integrators = _csv_list(args.integrators)
    for k in integrators:
        if k not in INTEGRATORS:
            raise UsageError(f"unknown integrator {k!r}; choose from {', '.join(INTEGRATORS)}")
    out_rows, out_eps = [], []
    for n_bar in _csv_list(args.n_bar, int):
        cfg = large_scale_config(n_bar)
        src = HeuristicSource() if not args.checkpoint else NetworkSource(_load_policy(args.checkpoint, cfg))
        eps = []
        for tau in _csv_list(args.tau, int):
            for kind in integrators:
                name = f"N={n_bar} tau={tau} {kind}"
                for m in run_large_scale(n_bar, tau, kind, src, _seeds(args), args.leaf_limit):
                    eps.append(bench.EpisodeRow(name, m.seed - args.seed, m.seed, m.utilization, m.items,
                                                max(m.items, 1), m.seconds))
        out_rows += bench.metrics_from_episodes(eps, bench.config_digest(cfg, _seeds(args)))
        out_eps += eps
    _emit(out_rows, args, out_eps)
    return EXIT_OK


def cmd_bench_variants(args) -> int:
    from .topplan import Planner, run_variant

    kv = _settings(args)
    env = env_config(kv)
    pcfg = planner_config(kv)
    if args.m is not None:
        pcfg = replace(pcfg, m=args.m)
    src = _planner_source(args, env)
    eps = []
    for s in _csv_list(args.s, int):
        for p in _csv_list(args.p, int):
            planner = Planner(src, pcfg)
            for seed in _seeds(args):
                r = run_variant(env, s, p, src, seed=seed, planner=planner)
                eps.append(bench.EpisodeRow(f"ToP s={s} p={p}", seed - args.seed, seed, r.utilization, r.items,
                                            r.decisions, r.seconds))
    _emit(bench.metrics_from_episodes(eps, bench.config_digest(env, _seeds(args))), args, eps)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suites

    try:
        checks = run_suites(args.suite, quick=args.quick, seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from e
    for c in checks:
        print(c.line())
    if args.out:
        Path(args.out).write_text(json.dumps([asdict(c) for c in checks], indent=2))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pctpack", description="Packing configuration trees: training, planning and benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, episodes=100):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--episodes", type=int, default=episodes)
        p.add_argument("--seed", type=int, default=0, help="first episode seed")
        p.add_argument("--format", choices=("text", "csv", "json"), default="text")
        p.add_argument("--out", help="write <OUT>.csv, <OUT>.json and <OUT>.episodes.csv")

    def source(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--checkpoint", help="trained policy checkpoint")
        g.add_argument("--heuristic", default="DBL", help="rule used for placements without a checkpoint")

    p = sub.add_parser("generate", help="write an item-sequence file")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--length", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="actor-critic training; writes a checkpoint and learning curve")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--minutes", type=float)
    p.add_argument("--updates", type=int)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curve", help="learning-curve CSV (update, mean_uti, loss)")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="online methods on paired seeds or a sequence file")
    common(p)
    p.add_argument("--methods", help="comma list: DBL, OnlineBPH, LSAH, HM, Random, pct:<checkpoint>")
    p.add_argument("--sequences", help="item-sequence file from `generate`")
    p.add_argument("--merge", nargs="+", help="combine result JSON files from one item source")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("plan", help="Tree-of-Packing planning episodes")
    common(p, episodes=10)
    source(p)
    p.add_argument("--s", type=int, default=1, help="selectable items")
    p.add_argument("--p", type=int, default=0, help="previewed items")
    p.add_argument("--m", type=int, help="sampled paths per decision")
    p.add_argument("--value", choices=("proxy", "critic", "none"))
    p.add_argument("--offline", type=int, metavar="N", help="plan once over N known items")
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("bench-large", help="recursive packing at large scales")
    common(p, episodes=10)
    p.add_argument("--n-bar", default="200", help="comma list of target item counts")
    p.add_argument("--tau", default="30", help="comma list of sub-tree thresholds")
    p.add_argument("--integrators", default="spatial_ensemble")
    p.add_argument("--checkpoint", help="policy checkpoint (default: heuristic proxy source)")
    p.add_argument("--leaf-limit", type=int)
    p.set_defaults(fn=cmd_bench_large)

    p = sub.add_parser("bench-variants", help="planner grid over selectable/previewed counts")
    common(p, episodes=20)
    source(p)
    p.add_argument("--s", default="1,3")
    p.add_argument("--p", default="0,2")
    p.add_argument("--m", type=int)
    p.set_defaults(fn=cmd_bench_variants)

    p = sub.add_parser("verify", help="run the oracle suites")
    p.add_argument("--suite", action="append", help="ems, ev, attention, reward, stability (default: all)")
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the checks as JSON")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, FileNotFoundError) as e:
        print(f"pctpack: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
