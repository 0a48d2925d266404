"""JSON config loading and validation for the CLI.

Configs are validated strictly: unknown keys are rejected and every error
names the offending field path. The accepted shape is documented in
docs/config-schema.md; version SCHEMA_VERSION is embedded in all outputs.
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
from pathlib import Path

from .accounting import AlphaGrid
from .blocks import Mode
from .engine import SCHEMA_VERSION, GlobalBudget, SimConfig
from .scheduling import Policy, PolicyConfig
from .semantics import CounterConfig, Semantic, SemanticConfig
from .workload import ArrivalSpec, DemandTemplate, WorkloadSpec


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _check_keys(obj: dict, allowed, path: str) -> None:
    unknown = set(obj) - set(allowed)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"{path}.{key}", "unknown key")


def _get(obj: dict, key: str, path: str, types, default=None, required=False,
         choices=None):
    if key not in obj:
        if required:
            raise ConfigError(f"{path}.{key}", "missing required key")
        return default
    value = obj[key]
    if isinstance(value, bool) and types is not bool:
        raise ConfigError(f"{path}.{key}", f"expected {types.__name__}, got bool")
    if types is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, types):
        raise ConfigError(f"{path}.{key}",
                          f"expected {types.__name__}, got {type(value).__name__}")
    if choices is not None and value not in choices:
        raise ConfigError(f"{path}.{key}", f"must be one of {sorted(choices)}")
    return value


def _wrap(path: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _build_grid(raw, path: str) -> AlphaGrid | None:
    if raw is None:
        return None
    if raw == "default":
        return AlphaGrid.default().finite()
    if raw == "compact":
        return AlphaGrid.compact()
    if isinstance(raw, list):
        return _wrap(path, AlphaGrid, tuple(float(a) for a in raw))
    raise ConfigError(path, "expected 'default', 'compact', or a list of orders")


def build_policy(obj: dict, path: str = "policy") -> PolicyConfig:
    _check_keys(obj, {"name", "mode", "n", "lifetime_ticks", "unlock_interval", "grid"}, path)
    name = _get(obj, "name", path, str, required=True,
                choices={p.value for p in Policy})
    mode = _get(obj, "mode", path, str, default="basic", choices={"basic", "renyi"})
    return _wrap(path, PolicyConfig,
                 Policy(name), Mode(mode),
                 n=_get(obj, "n", path, int),
                 lifetime_ticks=_get(obj, "lifetime_ticks", path, int),
                 unlock_interval=_get(obj, "unlock_interval", path, int, default=1),
                 grid=_build_grid(obj.get("grid"), f"{path}.grid"))


def build_counter(obj: dict, path: str) -> CounterConfig:
    _check_keys(obj, {"eps_count", "horizon", "beta", "noiseless", "log10_bound"}, path)
    return _wrap(path, CounterConfig,
                 eps_count=_get(obj, "eps_count", path, float, required=True),
                 horizon=_get(obj, "horizon", path, int, required=True),
                 beta=_get(obj, "beta", path, float, default=1e-3),
                 noiseless=_get(obj, "noiseless", path, bool, default=False),
                 log10_bound=_get(obj, "log10_bound", path, bool, default=False))


def build_semantic(obj: dict, path: str = "semantic") -> SemanticConfig:
    _check_keys(obj, {"name", "window_ticks", "user_group_size", "counter",
                      "bootstrap_windows", "tight_counter_curve", "user_stream"}, path)
    name = _get(obj, "name", path, str, default="event",
                choices={s.value for s in Semantic})
    counter = None
    if "counter" in obj:
        counter = build_counter(_get(obj, "counter", path, dict), f"{path}.counter")
    stream = None
    if "user_stream" in obj:
        sobj = _get(obj, "user_stream", path, dict)
        _check_keys(sobj, {"kind", "value"}, f"{path}.user_stream")
        stream = (_get(sobj, "kind", f"{path}.user_stream", str, required=True,
                       choices={"fixed", "poisson"}),
                  _get(sobj, "value", f"{path}.user_stream", float, required=True))
    return _wrap(path, SemanticConfig,
                 Semantic(name),
                 window_ticks=_get(obj, "window_ticks", path, int, default=1),
                 user_group_size=_get(obj, "user_group_size", path, int, default=1),
                 counter=counter,
                 bootstrap_windows=_get(obj, "bootstrap_windows", path, int, default=0),
                 tight_counter_curve=_get(obj, "tight_counter_curve", path, bool,
                                          default=False),
                 user_stream=stream)


def build_template(obj: dict, path: str) -> DemandTemplate:
    _check_keys(obj, {"kind", "value", "shots", "blocks"}, path)
    blocks = obj.get("blocks", 1)
    if isinstance(blocks, list):
        blocks = tuple(int(b) for b in blocks)
    return _wrap(path, DemandTemplate,
                 kind=_get(obj, "kind", path, str, required=True),
                 value=_get(obj, "value", path, float, required=True),
                 shots=_get(obj, "shots", path, int, default=1),
                 blocks=blocks)


def load_trace_file(file_path: Path) -> list[dict]:
    """Pipeline trace rows from JSON lines or CSV."""
    rows = []
    if file_path.suffix == ".csv":
        with open(file_path, newline="") as fh:
            for rec in csv.DictReader(fh):
                row = {"tick": int(rec["tick"]), "demand": float(rec["demand"])}
                sel = {}
                if rec.get("time_lo") not in (None, ""):
                    sel["time_range"] = [int(rec["time_lo"]), int(rec["time_hi"])]
                if rec.get("user_lo") not in (None, ""):
                    sel["user_range"] = [int(rec["user_lo"]), int(rec["user_hi"])]
                row["selector"] = sel
                if rec.get("label"):
                    row["label"] = rec["label"]
                if rec.get("release_share") not in (None, ""):
                    row["release_share"] = float(rec["release_share"])
                rows.append(row)
    else:
        with open(file_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    return rows


def build_workload(obj: dict, base_dir: Path, path: str = "workload") -> WorkloadSpec:
    _check_keys(obj, {"seed", "arrival", "n_pipelines", "mice_fraction", "mice",
                      "elephant", "selector_policy", "fair_share_n",
                      "release_fraction", "max_wait"}, path)
    arr = _get(obj, "arrival", path, dict, required=True)
    _check_keys(arr, {"kind", "rate", "interarrival", "pipelines", "file"},
                f"{path}.arrival")
    kind = _get(arr, "kind", f"{path}.arrival", str, required=True,
                choices={"poisson", "fixed", "trace"})
    pipelines = ()
    if kind == "trace":
        if "file" in arr:
            file_path = base_dir / _get(arr, "file", f"{path}.arrival", str)
            if not file_path.exists():
                raise ConfigError(f"{path}.arrival.file", f"no such file: {file_path}")
            pipelines = tuple(load_trace_file(file_path))
        else:
            pipelines = tuple(_get(arr, "pipelines", f"{path}.arrival", list,
                                   required=True))
    arrival = _wrap(f"{path}.arrival", ArrivalSpec,
                    kind,
                    rate=_get(arr, "rate", f"{path}.arrival", float),
                    interarrival=_get(arr, "interarrival", f"{path}.arrival", float),
                    pipelines=pipelines)
    mice = elephant = None
    if "mice" in obj:
        mice = build_template(_get(obj, "mice", path, dict), f"{path}.mice")
    if "elephant" in obj:
        elephant = build_template(_get(obj, "elephant", path, dict), f"{path}.elephant")
    return _wrap(path, WorkloadSpec,
                 arrival=arrival,
                 n_pipelines=_get(obj, "n_pipelines", path, int, default=0),
                 mice_fraction=_get(obj, "mice_fraction", path, float, default=1.0),
                 mice=mice, elephant=elephant,
                 selector_policy=_get(obj, "selector_policy", path, str,
                                      default="latest_k"),
                 seed=_get(obj, "seed", path, int, default=0),
                 fair_share_n=_get(obj, "fair_share_n", path, int),
                 release_fraction=_get(obj, "release_fraction", path, float,
                                       default=0.0),
                 max_wait=_get(obj, "max_wait", path, int))


def build_budget(obj: dict, path: str = "budget") -> GlobalBudget:
    _check_keys(obj, {"epsilon", "delta", "claim_delta"}, path)
    return _wrap(path, GlobalBudget,
                 epsilon=_get(obj, "epsilon", path, float, default=10.0),
                 delta=_get(obj, "delta", path, float, default=1e-7),
                 claim_delta=_get(obj, "claim_delta", path, float, default=1e-9))


def build_sim_config(obj: dict, base_dir: Path, seed: int | None = None,
                     name: str = "") -> SimConfig:
    _check_keys(obj, {"schema_version", "horizon", "budget", "policy", "semantic",
                      "workload", "name"}, "")
    version = _get(obj, "schema_version", "", int, required=True)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version}")
    workload = build_workload(_get(obj, "workload", "", dict, required=True), base_dir)
    if seed is not None:
        workload = _wrap("workload.seed", lambda: _replace_seed(workload, seed))
    return _wrap("", SimConfig,
                 policy=build_policy(_get(obj, "policy", "", dict, required=True)),
                 semantic=build_semantic(_get(obj, "semantic", "", dict, default={})),
                 workload=workload,
                 budget=build_budget(_get(obj, "budget", "", dict, default={})),
                 horizon=_get(obj, "horizon", "", int, required=True),
                 name=_get(obj, "name", "", str, default=name))


def _replace_seed(workload: WorkloadSpec, seed: int) -> WorkloadSpec:
    from dataclasses import replace
    return replace(workload, seed=seed)


# ------------------------------------------------------------------ sweeps
SWEEP_KEYS = ("n", "mice_fraction", "policy", "load")


def build_sweep(obj: dict, base_dir: Path) -> list[tuple[dict, SimConfig]]:
    """Expand a sweep config into (grid coordinates, run config) pairs,
    sorted by the grid coordinates."""
    _check_keys(obj, {"schema_version", "base", "grid"}, "")
    version = _get(obj, "schema_version", "", int, required=True)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version}")
    base = _get(obj, "base", "", dict, required=True)
    grid = _get(obj, "grid", "", dict, required=True)
    _check_keys(grid, set(SWEEP_KEYS), "grid")
    axes = [(key, grid[key]) for key in SWEEP_KEYS if key in grid]
    if not axes or any(not isinstance(vals, list) or not vals for _, vals in axes):
        raise ConfigError("grid", "sweep grid must have at least one non-empty axis")
    out = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        coords = dict(zip((k for k, _ in axes), combo))
        cfg_obj = copy.deepcopy(base)
        _apply_coords(cfg_obj, coords)
        label = ",".join(f"{k}={v}" for k, v in coords.items())
        out.append((coords, build_sim_config(cfg_obj, base_dir, name=label)))
    out.sort(key=lambda pair: tuple(str(v) for v in pair[0].values()))
    return out


def _apply_coords(cfg_obj: dict, coords: dict) -> None:
    for key, value in coords.items():
        if key == "n":
            cfg_obj.setdefault("policy", {})["n"] = value
        elif key == "mice_fraction":
            cfg_obj.setdefault("workload", {})["mice_fraction"] = value
        elif key == "policy":
            cfg_obj.setdefault("policy", {})["name"] = value
        elif key == "load":
            arrival = cfg_obj.get("workload", {}).get("arrival", {})
            if arrival.get("kind") == "poisson":
                arrival["rate"] = arrival["rate"] * value
            elif arrival.get("kind") == "fixed":
                arrival["interarrival"] = arrival["interarrival"] / value
            else:
                raise ConfigError("grid.load", "load scaling needs a poisson or fixed arrival")


def load_json(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
