"""Run configuration, run directories and the data each command emits.

A run config is one JSON document::

    {
      "schema_version": 1,
      "task": {"name": "Task2"},            # plus any EnvConfig field overrides;
                                            # other names need explicit obstacles
      "K": 8,
      "init": {"kind": "uninformative"},    # or "informative" with nu0 / stiffness
      "optimizer": {"Ns": 15, "Ne": 3, "beta": 1.0, "max_iters": 50},
      "initials": null,                     # world init positions, averaged
      "seeds": [0],
      "eval": {"box": [[0.04, 0.025], [0.12, 0.075]]}
    }

Missing fields take the defaults below. Every run writes into
``<out>/<task>-<config hash>-seed<seed>`` and refuses to reuse a directory.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from .distributions import estimate_gamma, entropy_scan
from .imogic import PolicyDistribution, PolicyParams
from .linalg import random_spd
from .optimizer import EnvObjective, OptimizerConfig, init_informative, init_uninformative, run
from .sim2d import TASKS, EnvConfig, make_task, rollout, write_trace

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "task": {"name": "Task2"},
    "K": 8,
    "init": {"kind": "uninformative"},
    "optimizer": {"max_iters": 50},
    "initials": None,
    "seeds": [0],
    "eval": {"box": None},
}

INIT_FIELDS = {"kind", "nu0", "stiffness", "cov_floor"}
QUANTILES = (0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0)


class ConfigError(ValueError):
    """Invalid or unparseable configuration (CLI exit status 1)."""


class RunExistsError(RuntimeError):
    """The content-addressed run directory already holds a run."""


# --- configuration --------------------------------------------------------


def _merge(base, update):
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text):
    """``a.b.c=value`` -> (["a", "b", "c"], value); the value is JSON when it
    parses as JSON and a plain string otherwise."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    path = key.strip().split(".")
    if not all(path):
        raise ConfigError(f"override {text!r} has an empty key segment")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    for text in overrides or ():
        path, value = parse_override(text)
        node = cfg
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = value
    return cfg


def _optimizer_config(d, seed=0):
    fields = {f.name for f in dataclasses.fields(OptimizerConfig)} - {"seed"}
    unknown = set(d) - fields
    if unknown:
        raise ConfigError(f"unknown field optimizer.{sorted(unknown)[0]}")
    d = dict(d)
    if d.get("gamma") is not None:
        try:
            d["gamma"] = {int(k): float(v) for k, v in d["gamma"].items()}
        except (AttributeError, TypeError, ValueError) as exc:
            raise ConfigError("optimizer.gamma must map dimension to a number") from exc
    try:
        return OptimizerConfig(seed=int(seed), **d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"optimizer: {exc}") from exc


def env_config(cfg):
    task = cfg["task"]
    if isinstance(task, str):
        task = {"name": task}
    if not isinstance(task, dict) or "name" not in task:
        raise ConfigError("task must be a task name or an object with a name field")
    fields = {f.name for f in dataclasses.fields(EnvConfig)}
    unknown = set(task) - fields
    if unknown:
        raise ConfigError(f"unknown field task.{sorted(unknown)[0]}")
    overrides = {k: v for k, v in task.items() if k != "name"}
    try:
        if task["name"] in TASKS:
            if "obstacles" in overrides:
                overrides["obstacles"] = tuple(tuple(r) for r in overrides["obstacles"])
            return make_task(task["name"], **overrides)
        if "obstacles" not in task:
            raise ConfigError(
                f"unknown task {task['name']!r}; inline environments must list their obstacles"
            )
        return EnvConfig.from_dict(task)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"task: {exc}") from exc


def validate(cfg):
    """Check a merged config dict; raises :class:`ConfigError`."""
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}"
        )
    unknown = set(cfg) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown field {sorted(unknown)[0]}")
    env_config(cfg)
    if not isinstance(cfg["K"], int) or cfg["K"] < 0:
        raise ConfigError(f"K must be a nonnegative integer, got {cfg['K']!r}")
    init = cfg["init"]
    if not isinstance(init, dict) or init.get("kind") not in ("uninformative", "informative"):
        raise ConfigError("init.kind must be 'uninformative' or 'informative'")
    if set(init) - INIT_FIELDS:
        raise ConfigError(f"unknown field init.{sorted(set(init) - INIT_FIELDS)[0]}")
    if not isinstance(cfg["optimizer"], dict):
        raise ConfigError("optimizer must be an object")
    _optimizer_config(cfg["optimizer"])
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not all(isinstance(s, int) and 0 <= s < 2**64 for s in seeds):
        raise ConfigError("seeds must be a list of 64-bit nonnegative integers")
    if cfg["initials"] is not None:
        try:
            arr = np.asarray(cfg["initials"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError("initials must be a list of [x, y] positions") from exc
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ConfigError("initials must be a list of [x, y] positions")
    box = cfg["eval"].get("box") if isinstance(cfg["eval"], dict) else None
    if box is not None and np.asarray(box, dtype=float).shape != (2, 2):
        raise ConfigError("eval.box must be [[x_min, y_min], [x_max, y_max]]")
    return cfg


def load_config(path=None, overrides=()):
    """Read, merge with defaults, apply ``key=value`` overrides and validate."""
    user = {"schema_version": SCHEMA_VERSION}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    cfg = _merge(DEFAULTS, user)
    cfg = apply_overrides(cfg, overrides)
    return validate(cfg)


def config_hash(cfg):
    """Short content hash of everything that determines a run except the seed."""
    core = {k: v for k, v in cfg.items() if k not in ("seeds", "eval")}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def initial_distribution(cfg, env):
    init = cfg["init"]
    if init["kind"] == "uninformative":
        return init_uninformative(2, cfg["K"])
    return init_informative(
        2,
        cfg["K"],
        env.mass,
        env.horizon,
        env.init_offset,
        nu0=float(init.get("nu0", 30.0)),
        stiffness=init.get("stiffness"),
        cov_floor=float(init.get("cov_floor", 1e-6)),
    )


def make_run_dir(out_root, cfg, seed):
    env = env_config(cfg)
    path = Path(out_root) / f"{env.name}-{config_hash(cfg)}-seed{seed}"
    if path.exists() and any(path.iterdir()):
        raise RunExistsError(f"run directory {path} already exists; refusing to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


# --- file formats ---------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def iteration_header(names):
    return ["iter", "R_b", "R_e", "success_rate"] + [f"nu_{n}" for n in names]


def write_iterations(records, names, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(iteration_header(names))
        for r in records:
            w.writerow(
                [r.iter, _fmt(r.R_b), _fmt(r.R_e), _fmt(r.success_rate)]
                + [_fmt(r.nu_by_param[n]) for n in names]
            )


def read_iterations(path):
    """Column name -> array; ``iter`` is integer, everything else float."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        out[name] = np.array(col, dtype=int if name == "iter" else float)
    return out


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """A policy checkpoint, or a distribution checkpoint reduced to its mean."""
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    kind = d.get("kind")
    if kind == "policy":
        return PolicyParams.from_dict(d)
    if kind == "distribution":
        return PolicyDistribution.from_dict(d).mean_policy()
    raise ConfigError(f"{path}: unknown checkpoint kind {kind!r}")


# --- commands -------------------------------------------------------------


def train(cfg, seed, out_root):
    """One training run; returns the run directory."""
    env = env_config(cfg)
    ocfg = _optimizer_config(cfg["optimizer"], seed)
    phi0 = initial_distribution(cfg, env)
    objective = EnvObjective(env, cfg["initials"])
    path = make_run_dir(out_root, cfg, seed)
    write_json({**cfg, "seeds": [seed]}, path / "config.json")

    excursion = [0.0]

    def track(rec, policies, evals):
        excursion[0] = max(excursion[0], max(e.max_excursion for e in evals))

    result = run(ocfg, objective, phi0, callback=track)
    names = phi0.names
    write_iterations(result.records, names, path / "iterations.csv")
    write_json(result.phi.to_dict(), path / "final_phi.json")

    summary = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "task": env.name,
        "iterations": len(result.records),
        "stop_reason": result.stop_reason,
        "max_success_rate": max((r.success_rate for r in result.records), default=None),
        "final_success_rate": result.records[-1].success_rate if result.records else None,
        "max_excursion": excursion[0] if result.records else None,
        "workspace_limit": env.workspace_limit,
        "best_return": None,
        "best_success": None,
    }
    if result.best_policy is not None:
        write_json(result.best_policy.to_dict(), path / "best_policy.json")
        best = rollout(result.best_policy, env)
        write_trace(best, path / "best_trace.csv")
        summary["best_return"] = result.best_return
        summary["best_success"] = bool(best.success)
        final = rollout(result.phi.mean_policy(), env)
        write_trace(final, path / "final_trace.csv")
        summary["final_mean_policy_success"] = bool(final.success)
    write_json(summary, path / "summary.json")
    log.info("run %s: %s after %d iterations", path, result.stop_reason, len(result.records))
    return path


def eval_initials(env, n, box, rng):
    """``n`` world initial positions uniform in ``box`` that clear every obstacle."""
    if box is None:
        x, y = env.init_pos
        box = [[x - 0.04, y], [x + 0.04, y + 0.05]]
    lo, hi = np.asarray(box, dtype=float)
    h = env.block_half_width
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 1000 * max(n, 1):
            raise RuntimeError("could not place initial positions clear of obstacles")
        p = lo + (hi - lo) * rng.random(2)
        if any(
            p[0] + h > r.x0 and p[0] - h < r.x1 and p[1] + h > r.y0 and p[1] - h < r.y1
            for r in env.obstacles
        ):
            continue
        out.append(p)
    return out


def evaluate(policy, env, n, out_dir, seed=0, box=None):
    """Roll ``policy`` out from ``n`` random initials; writes one trace per
    initial and ``eval_summary.csv``. Returns the summary rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xE7A1]))
    rows = []
    for i, p in enumerate(eval_initials(env, n, box, rng)):
        ro = rollout(policy, env, init_pos=p)
        write_trace(ro, out_dir / f"trace_{i:03d}.csv")
        free = ~(ro.in_contact[:-1] | ro.in_contact[1:])
        dV = np.diff(ro.lyapunov)
        rows.append(
            {
                "index": i,
                "init_x": float(p[0]),
                "init_y": float(p[1]),
                "final_dist": float(np.linalg.norm(ro.s[-1])),
                "success": int(ro.success),
                "V0": float(ro.lyapunov[0]),
                "V_end": float(ro.lyapunov[-1]),
                "max_V_rise": float(max(0.0, np.max(ro.lyapunov - ro.lyapunov[0]))),
                "max_free_dV": float(dV[free].max()) if free.any() else 0.0,
                "max_excursion": float(np.max(np.linalg.norm(ro.s, axis=1))),
                "diverged": int(ro.diverged),
            }
        )
    cols = [
        "index", "init_x", "init_y", "final_dist", "success", "V0", "V_end",
        "max_V_rise", "max_free_dV", "max_excursion", "diverged",
    ]
    with open(out_dir / "eval_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return rows


def excursion_stats(cfg, iters, out_path, seed=0):
    """Quantiles of per-step |s| over every rollout of the first ``iters``
    training iterations, one row per iteration."""
    env = env_config(cfg)
    ocfg = dataclasses.replace(_optimizer_config(cfg["optimizer"], seed), max_iters=int(iters))
    objective = EnvObjective(env, cfg["initials"], keep_rollouts=True)
    rows = []

    def collect(rec, policies, evals):
        d = np.concatenate([np.linalg.norm(r.s, axis=1) for e in evals for r in e.rollouts])
        rows.append([rec.iter, d.size] + np.quantile(d, QUANTILES).tolist())

    run(ocfg, objective, initial_distribution(cfg, env), callback=collect)
    header = ["iter", "n"] + [f"q{int(round(q * 100)):02d}" for q in QUANTILES]
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0], r[1]] + [_fmt(x) for x in r[2:]])
    return header, rows


def write_entropy_scan(dim, out_path, n_points=50, nu_max=1e4, seed=None):
    """Table of (nu, ln nu, H) at a fixed mean plus the fitted gamma."""
    mean = None if seed is None else random_spd(dim, np.random.default_rng(seed))
    fit = estimate_gamma(dim, mean=mean, n_points=n_points, nu_max=nu_max)
    nus, H = entropy_scan(dim, mean, n_points, nu_max)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nu", "ln_nu", "H"])
        for nu, h in zip(nus, H):
            w.writerow([_fmt(nu), _fmt(np.log(nu)), _fmt(h)])
    return fit

