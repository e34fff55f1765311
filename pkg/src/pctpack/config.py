"""Flat ``key = value`` configuration files shared by the CLI and experiments.

Example::

    # continuous Setting 2, large scale
    mode = continuous
    bin = 1,1,1
    sampler = large
    n_bar = 200
    tau = 30
"""
from __future__ import annotations

import configparser
from dataclasses import fields
from pathlib import Path

from .env import EnvConfig, SamplerSpec
from .geometry import BinSpec, Vec3
from .topplan import PlannerConfig

_SECTION = "pctpack"

ENV_KEYS = {"bin", "mode", "grid_step", "setting", "scheme", "constraint", "constraint_weight", "f_bar",
            "leaf_limit", "orientations"}
SAMPLER_KEYS = {"sampler", "low", "high", "z_set", "mean", "std", "clip", "disturb", "n_bar", "density",
                "categories"}
PLANNER_KEYS = {"m", "horizon", "full_depth", "value", "planner_leaf_limit", "use_cache", "cache_size"}
TRAIN_KEYS = {"k_p", "k_s", "lr", "alpha", "beta", "gamma", "entropy", "max_grad_norm", "optimizer", "seed",
              "updates", "time_limit", "window"}
RUN_KEYS = {"s", "p", "tau", "integrator", "episodes", "seeds", "policy", "checkpoint", "output", "sequences"}
KNOWN_KEYS = ENV_KEYS | SAMPLER_KEYS | PLANNER_KEYS | TRAIN_KEYS | RUN_KEYS


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict[str, str]:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from e
    kv = dict(cp[_SECTION])
    unknown = sorted(set(kv) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return kv


def load_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text())


def dump_config(kv: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in kv.items() if v is not None)


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("", "none") else int(s)


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none") else float(s)


def env_config(kv: dict[str, str]) -> EnvConfig:
    """Build an environment config; unspecified keys keep their defaults.

    A continuous bin defaults to the unit cube and the continuous sampler.
    """
    try:
        mode = kv.get("mode", "discrete")
        default_size = "1,1,1" if mode == "continuous" else "10,10,10"
        size = _floats(kv.get("bin", default_size))
        if len(size) != 3:
            raise ConfigError("bin needs three sizes")
        bin = BinSpec(Vec3(*size), mode, float(kv.get("grid_step", 1.0)))
        skw: dict = {"kind": kv.get("sampler", "continuous" if mode == "continuous" else "discrete")}
        for k in ("low", "mean", "std", "disturb"):
            if k in kv:
                skw[k] = float(kv[k])
        if "high" in kv:
            skw["high"] = _opt_float(kv["high"])
        if "z_set" in kv:
            skw["z_set"] = _floats(kv["z_set"]) or None
        if "clip" in kv:
            skw["clip"] = _floats(kv["clip"])
        for k in ("n_bar", "categories"):
            if k in kv:
                skw[k] = int(kv[k])
        if "density" in kv:
            skw["density"] = _bool(kv["density"])
        setting = int(kv.get("setting", 2))
        if setting == 3 and "density" not in kv:
            skw["density"] = True
        ekw: dict = {"bin": bin, "setting": setting, "sampler": SamplerSpec(**skw)}
        for k in ("scheme", "constraint"):
            if k in kv:
                ekw[k] = kv[k]
        for k in ("constraint_weight", "f_bar"):
            if k in kv:
                ekw[k] = float(kv[k])
        for k in ("leaf_limit", "orientations"):
            if k in kv:
                ekw[k] = _opt_int(kv[k])
        return EnvConfig(**ekw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def env_to_kv(cfg: EnvConfig) -> dict:
    sp = cfg.sampler
    return {
        "mode": cfg.bin.mode, "bin": tuple(cfg.bin.size), "grid_step": cfg.bin.grid_step,
        "setting": cfg.setting, "scheme": cfg.scheme, "constraint": cfg.constraint,
        "constraint_weight": cfg.constraint_weight, "f_bar": cfg.f_bar,
        "leaf_limit": "none" if cfg.leaf_limit is None else cfg.leaf_limit,
        "orientations": "none" if cfg.orientations is None else cfg.orientations,
        "sampler": sp.kind, "low": sp.low, "high": "none" if sp.high is None else sp.high,
        "z_set": sp.z_set if sp.z_set else "", "mean": sp.mean, "std": sp.std, "clip": sp.clip,
        "disturb": sp.disturb, "n_bar": sp.n_bar, "density": sp.density, "categories": sp.categories,
    }


def planner_config(kv: dict[str, str]) -> PlannerConfig:
    kw: dict = {}
    try:
        if "m" in kv:
            kw["m"] = int(kv["m"])
        if "horizon" in kv:
            kw["horizon"] = _opt_int(kv["horizon"])
        if "full_depth" in kv:
            kw["full_depth"] = _bool(kv["full_depth"])
        if "value" in kv:
            kw["value"] = kv["value"]
        if "planner_leaf_limit" in kv:
            kw["leaf_limit"] = _opt_int(kv["planner_leaf_limit"])
        if "use_cache" in kv:
            kw["use_cache"] = _bool(kv["use_cache"])
        if "cache_size" in kv:
            kw["cache_size"] = int(kv["cache_size"])
        return PlannerConfig(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def training_config(kv: dict[str, str], env: EnvConfig, **overrides):
    from .training import TrainingConfig

    types = {f.name: f.type for f in fields(TrainingConfig)}
    kw: dict = {"env": env}
    try:
        for k in TRAIN_KEYS & set(kv):
            if k == "optimizer":
                kw[k] = kv[k]
            elif k in ("updates",):
                kw[k] = _opt_int(kv[k])
            elif k == "time_limit":
                kw[k] = _opt_float(kv[k])
            elif "int" in str(types[k]):
                kw[k] = int(kv[k])
            else:
                kw[k] = float(kv[k])
        kw.update(overrides)
        return TrainingConfig(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
