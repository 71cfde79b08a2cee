"""Experiment runner: config parsing, sweep orchestration, log serialization.

Config files are JSON or flat INI-like key=value text; JSON is canonical in
the emitted manifest. Unknown keys are rejected (exit code 2, naming the
key); IO failures exit with code 3. A previously written manifest.json is
itself a valid --config, which is what makes every output byte
reproducible from the manifest alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import multiprocessing
import os
import sys

from . import __version__
from .hippo import train_agent
from .model import SystemParams
from .sim import SCHEMES, run_episode, summarize

# accepted shorthand -> SystemParams field
ALIASES = {
    "K": "num_gus",
    "M": "num_uavs",
    "V": "lyap_v",
    "H": "altitude",
    "a_max": "aoi_budget",
    "w1": "w_aoi",
    "w2": "w_value",
    "D_min": "size_min_bits",
    "D_max": "size_max_bits",
    "R_cov": "cov_radius",
    "W_bw": "bandwidth",
}

EXPERIMENT_KEYS = ("schemes", "seeds", "horizon", "episodes", "train_horizon",
                   "sweep")

DEFAULT_EXPERIMENT = {
    "schemes": list(SCHEMES),
    "seeds": [0],
    "horizon": None,          # falls back to params.horizon
    "episodes": 0,            # PPO training episodes before the logged eval
    "train_horizon": 24,      # slots per training episode
    "sweep": None,            # {"key": field, "values": [...]}
}


class ConfigError(Exception):
    """Schema violation; message names the offending key path."""


def _param_fields() -> dict:
    return {f.name: f for f in dataclasses.fields(SystemParams)}


def _coerce(name: str, value, default):
    try:
        if name == "bs_pos":
            pos = tuple(float(x) for x in value)
            if len(pos) != 2:
                raise ValueError
            return pos
        if name == "forced_rho":
            return None if value is None else float(value)
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key '{name}': cannot parse {value!r}") from exc


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


def _parse_ini(text: str) -> dict:
    out: dict = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            continue   # section headers carry no information here
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key in ("schemes",):
            out[key] = [v.strip() for v in val.split(",") if v.strip()]
        elif key in ("seeds",):
            out[key] = [int(v) for v in val.split(",") if v.strip()]
        elif key == "sweep":
            out[key] = val    # "key=v1,v2" handled by parse_sweep
        else:
            out[key] = _parse_scalar(val)
    return out


def parse_sweep(text: str) -> dict:
    """--sweep key=v1,v2,... into {"key": ..., "values": [...]}."""
    if "=" not in text:
        raise ConfigError(f"sweep spec '{text}': expected key=v1,v2,...")
    key, _, vals = text.partition("=")
    values = [_parse_scalar(v) for v in vals.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"sweep spec '{text}': no values")
    return {"key": key.strip(), "values": values}


def resolve_param_key(key: str) -> str:
    fields = _param_fields()
    name = ALIASES.get(key, key)
    if name not in fields:
        raise ConfigError(f"unknown config key '{key}'")
    return name


def load_config(path: str):
    """Read a config (or manifest) file into (SystemParams, experiment dict)."""
    with open(path) as fh:
        text = fh.read()
    stripped = text.strip()
    if not stripped:
        raw: dict = {}
    elif stripped.startswith("{"):
        try:
            raw = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if "config" in raw and "cells" in raw:
            raw = raw["config"]   # a manifest reproduces its own run
    else:
        raw = _parse_ini(text)
    return build_config(raw)


def build_config(raw: dict):
    """Validate a flat mapping into (SystemParams, experiment dict)."""
    fields = _param_fields()
    params_kv: dict = {}
    experiment = dict(DEFAULT_EXPERIMENT)
    defaults = SystemParams()
    for key, value in raw.items():
        if key in EXPERIMENT_KEYS:
            if key == "sweep" and isinstance(value, str):
                value = parse_sweep(value)
            experiment[key] = value
            continue
        name = resolve_param_key(key)
        params_kv[name] = _coerce(name, value, getattr(defaults, name))
    try:
        params = SystemParams(**params_kv)
    except ValueError as exc:
        raise ConfigError(f"invalid parameter value: {exc}") from exc
    _validate_experiment(experiment)
    return params, experiment


def _validate_experiment(exp: dict) -> None:
    bad = [s for s in exp["schemes"] if s not in SCHEMES]
    if bad:
        raise ConfigError(f"unknown scheme(s) {bad}; valid: {list(SCHEMES)}")
    if not exp["seeds"]:
        raise ConfigError("config key 'seeds': need at least one seed")
    exp["seeds"] = [int(s) for s in exp["seeds"]]
    for key in ("horizon", "episodes", "train_horizon"):
        if exp[key] is not None:
            exp[key] = int(exp[key])
            if exp[key] < 0 or (key != "episodes" and exp[key] == 0):
                raise ConfigError(f"config key '{key}': must be positive")
    sweep = exp["sweep"]
    if sweep is not None:
        if not isinstance(sweep, dict) or "key" not in sweep or "values" not in sweep:
            raise ConfigError("config key 'sweep': expected {key, values}")
        field = resolve_param_key(str(sweep["key"]))
        defaults = SystemParams()
        values = [_coerce(field, v, getattr(defaults, field))
                  for v in sweep["values"]]
        exp["sweep"] = {"key": field, "values": values}


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, float):
        return "%.9g" % x
    return str(x)


def _run_cell(args):
    """One (params, scheme, seed) cell; returns (rows, header, summary)."""
    params, scheme, seed, horizon, episodes, train_horizon = args
    agent = None
    if scheme in ("LyaHiPPO", "ConventionalPPO") and episodes > 0:
        agent, _ = train_agent(params, scheme, episodes, seed,
                               horizon=train_horizon)
    log = run_episode(params, scheme, seed, horizon=horizon, agent=agent)
    return log, summarize(log)


def run_experiment(params: SystemParams, experiment: dict, out_dir: str,
                   workers: int = 1) -> dict:
    """Run every (sweep value x scheme x seed) cell and serialize results.

    Writes one CSV per cell, a summary.csv of the time-averaged metrics,
    and manifest.json with the fully resolved configuration. Returns the
    manifest dict.
    """
    os.makedirs(out_dir, exist_ok=True)
    sweep = experiment["sweep"]
    sweep_points = ([(None, params)] if sweep is None else
                    [(v, dataclasses.replace(params, **{sweep["key"]: v}))
                     for v in sweep["values"]])
    jobs = []
    meta = []
    for value, p in sweep_points:
        subdir = out_dir if value is None else os.path.join(
            out_dir, f"{sweep['key']}={_fmt(value)}")
        os.makedirs(subdir, exist_ok=True)
        for scheme in experiment["schemes"]:
            for seed in experiment["seeds"]:
                jobs.append((p, scheme, seed, experiment["horizon"],
                             experiment["episodes"], experiment["train_horizon"]))
                meta.append((value, scheme, seed,
                             os.path.join(subdir, f"{scheme}_{seed}.csv")))

    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.map(_run_cell, jobs)
    else:
        results = [_run_cell(j) for j in jobs]

    summary_rows = []
    files = []
    for (value, scheme, seed, path), (log, summ) in zip(meta, results):
        log.to_csv(path)
        files.append(os.path.relpath(path, out_dir))
        summary_rows.append({
            "scheme": scheme, "seed": seed,
            "sweep_key": "" if sweep is None else sweep["key"],
            "sweep_value": "" if value is None else _fmt(value),
            "slots": summ["slots"], "aoi_mean": summ["aoi_mean"],
            "value_mean": summ["value_mean"],
            "value_slot_mean": summ["value_slot_mean"],
            "saoi_mean": summ["saoi_mean"],
            "file": os.path.relpath(path, out_dir)})

    summary_path = os.path.join(out_dir, "summary.csv")
    cols = ["scheme", "seed", "sweep_key", "sweep_value", "slots",
            "aoi_mean", "value_mean", "value_slot_mean", "saoi_mean", "file"]
    with open(summary_path, "w", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for row in summary_rows:
            cells = []
            for c in cols:
                x = row[c]
                cells.append("%.9g" % x if isinstance(x, float) else str(x))
            fh.write(",".join(cells) + "\n")

    config = {f.name: getattr(params, f.name) for f in dataclasses.fields(SystemParams)}
    config["bs_pos"] = list(config["bs_pos"])
    config.update({k: experiment[k] for k in EXPERIMENT_KEYS})
    manifest = {"version": __version__, "config": config,
                "cells": [{"scheme": s, "seed": sd,
                           "sweep_value": None if v is None else v, "file": f,
                           "gu_pos": [[float(x), float(y)]
                                      for x, y in log.gu_pos]}
                          for (v, s, sd, _), f, (log, _s) in
                          zip(meta, files, results)],
                "files": files + ["summary.csv"]}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="saoi-sim",
        description="Semantic-aware AoI minimization experiments "
                    "(UAV relay network simulator).")
    ap.add_argument("--config", help="JSON or INI-like config file "
                                     "(a manifest.json also works)")
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--scheme", "--schemes", nargs="+", dest="schemes",
                    metavar="NAME", help=f"schemes to run {SCHEMES}")
    ap.add_argument("--seed", "--seeds", nargs="+", type=int, dest="seeds",
                    metavar="N", help="master seeds (one run per seed)")
    ap.add_argument("--horizon", type=int, help="slots per evaluation episode")
    ap.add_argument("--episodes", type=int,
                    help="PPO training episodes before the logged run")
    ap.add_argument("--sweep", metavar="KEY=V1,V2,...",
                    help="sweep one parameter across values")
    ap.add_argument("--workers", type=int, default=1,
                    help="parallel (scheme, seed) workers")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.config:
            params, experiment = load_config(args.config)
        else:
            params, experiment = build_config({})
        overrides: dict = {}
        if args.schemes:
            overrides["schemes"] = args.schemes
        if args.seeds:
            overrides["seeds"] = args.seeds
        if args.horizon is not None:
            overrides["horizon"] = args.horizon
        if args.episodes is not None:
            overrides["episodes"] = args.episodes
        if args.sweep:
            overrides["sweep"] = parse_sweep(args.sweep)
        if overrides:
            experiment.update(overrides)
            _validate_experiment(experiment)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        manifest = run_experiment(params, experiment, args.out,
                                  workers=args.workers)
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {len(manifest['files'])} files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
