"""Run configuration: defaults, file loading, overrides and validation."""
from __future__ import annotations

import copy
import hashlib
import json
import os

import yaml

from .model import Geometry

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "load_config",
    "resolve_config",
    "apply_overrides",
    "parse_override",
    "validate_config",
    "config_hash",
    "canonical_json",
]


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 1."""


_NUM = (int, float)
_OPT_NUM = (int, float, type(None))

# section -> key -> (default, accepted types)
SCHEMA = {
    "model": {
        "geometry": ("ladder", (str,)),
        "n_left": (4, (int,)),
        "n_right": (None, (int, type(None))),
        "J": (1.0, _NUM),
        "delta": (0.3, _NUM),
        "j_c": (0.3, _NUM),
        "W": (0.0, _NUM),
        "disorder_seed": (0, (int,)),
    },
    "engine": {
        "dt_override": (None, _OPT_NUM),
        "renormalize_interval": (None, _OPT_NUM),
        "power_iter_cap": (300, (int,)),
        "master_seed": (0, (int,)),
        "method": ("chebyshev", (str,)),
    },
    "filter": {
        "sigma": (0.6, _NUM),
        "e_center": (0.0, _NUM),
        "cheb_tol": (1e-10, _NUM),
    },
    "estimator": {
        "n_samples": (10, (int,)),
        "t_min": (50.0, _NUM),
        "t_max": (500.0, _NUM),
        "t_spacing": (1.0, _NUM),
        "slope_dE": (None, _OPT_NUM),
        "batch_size": (None, (int, type(None))),
    },
    "mod": {
        "beta": (0.5, _NUM),
        "d0": ("N_L", (str, int, float)),
        "t_max": (200.0, _NUM),
        "n_times": (401, (int,)),
        "tail_fraction": (0.25, _NUM),
        "n_seeds": (1, (int,)),
        "eps_samples": (10, (int,)),
    },
    "sweep": {
        "n_left": (None, (list, type(None))),
        "j_c": (None, (list, type(None))),
        "delta": (None, (list, type(None))),
        "W": (None, (list, type(None))),
        "disorder_seeds": (None, (list, type(None))),
        "n_realizations": (10, (int,)),
        "e_center": ([-2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0], (list,)),
    },
    "output": {
        "directory": ("results", (str,)),
        "format": ("json", (str,)),
    },
}

DEFAULTS = {s: {k: v[0] for k, v in keys.items()} for s, keys in SCHEMA.items()}


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for section, values in (update or {}).items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, val in values.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            out[section][key] = val
    return out


def load_config(path: str | None) -> dict:
    """Raw mapping from a YAML or JSON file (JSON is valid YAML); ``{}`` for no path."""
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config {path!r}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping of sections")
    return data


def parse_override(arg: str) -> tuple[str, str, object]:
    """``--section.key=value`` to ``(section, key, value)``; values are read as YAML scalars/lists."""
    body = arg[2:] if arg.startswith("--") else arg
    if "=" not in body or "." not in body.split("=", 1)[0]:
        raise ConfigError(f"override {arg!r} is not of the form --section.key=value")
    lhs, raw = body.split("=", 1)
    section, key = lhs.split(".", 1)
    try:
        value = yaml.safe_load(raw) if raw != "" else None
    except yaml.YAMLError:
        value = raw
    return section, key, value


def apply_overrides(cfg: dict, overrides) -> dict:
    upd: dict = {}
    for arg in overrides:
        section, key, value = parse_override(arg)
        upd.setdefault(section, {})[key] = value
    return _merge(cfg, upd)


def _check_type(section, key, val):
    types = SCHEMA[section][key][1]
    if isinstance(val, bool) or not isinstance(val, types):
        names = "/".join(t.__name__ for t in types)
        raise ConfigError(f"{section}.{key} must be {names}, got {val!r}")


def _positive(cfg, section, key, allow_zero=False):
    v = cfg[section][key]
    if v is None:
        return
    if (v < 0) if allow_zero else (v <= 0):
        raise ConfigError(f"{section}.{key} must be {'nonnegative' if allow_zero else 'positive'}, got {v!r}")


def validate_config(cfg: dict) -> dict:
    """Type and range checks on a fully merged config; returns it unchanged."""
    for section, keys in SCHEMA.items():
        for key in keys:
            _check_type(section, key, cfg[section][key])
    m = cfg["model"]
    try:
        Geometry(m["geometry"])
    except ValueError:
        raise ConfigError(f"model.geometry must be one of {[g.value for g in Geometry]}") from None
    _positive(cfg, "model", "n_left")
    _positive(cfg, "model", "n_right")
    _positive(cfg, "model", "W", allow_zero=True)
    _positive(cfg, "engine", "dt_override")
    _positive(cfg, "engine", "renormalize_interval")
    _positive(cfg, "engine", "power_iter_cap")
    if cfg["engine"]["method"] not in ("rk4", "chebyshev"):
        raise ConfigError("engine.method must be 'rk4' or 'chebyshev'")
    _positive(cfg, "filter", "sigma")
    _positive(cfg, "filter", "cheb_tol")
    est = cfg["estimator"]
    if est["n_samples"] < 2:
        raise ConfigError("estimator.n_samples must be >= 2")
    if not 0 < est["t_min"] < est["t_max"]:
        raise ConfigError("estimator needs 0 < t_min < t_max")
    _positive(cfg, "estimator", "t_spacing")
    _positive(cfg, "estimator", "slope_dE")
    _positive(cfg, "estimator", "batch_size")
    mod = cfg["mod"]
    _positive(cfg, "mod", "beta", allow_zero=True)
    _positive(cfg, "mod", "t_max")
    if mod["n_times"] < 2:
        raise ConfigError("mod.n_times must be >= 2")
    if not 0 < mod["tail_fraction"] <= 1:
        raise ConfigError("mod.tail_fraction must lie in (0, 1]")
    _positive(cfg, "mod", "n_seeds")
    if mod["eps_samples"] < 2:
        raise ConfigError("mod.eps_samples must be >= 2")
    if isinstance(mod["d0"], str) and mod["d0"].replace(" ", "").lstrip("+-") != "N_L":
        try:
            float(mod["d0"])
        except ValueError:
            raise ConfigError("mod.d0 must be a number or ±N_L") from None
    sw = cfg["sweep"]
    item_types = {"n_left": int, "j_c": _NUM, "delta": _NUM, "W": _NUM, "disorder_seeds": int, "e_center": _NUM}
    for key, t in item_types.items():
        for x in sw[key] or []:
            if isinstance(x, bool) or not isinstance(x, t):
                raise ConfigError(f"sweep.{key} entries must be numbers, got {x!r}")
    if any(x < 1 for x in sw["n_left"] or []):
        raise ConfigError("sweep.n_left entries must be positive")
    if any(x < 0 for x in sw["W"] or []):
        raise ConfigError("sweep.W entries must be nonnegative")
    _positive(cfg, "sweep", "n_realizations")
    if cfg["output"]["format"] != "json":
        raise ConfigError("output.format supports only 'json'")
    return cfg


def resolve_config(path: str | None = None, overrides=(), out_dir: str | None = None) -> dict:
    """Defaults, then file, then ``--section.key=value`` overrides, then ``--out``; validated."""
    cfg = _merge(DEFAULTS, load_config(path))
    cfg = apply_overrides(cfg, overrides)
    if out_dir is not None:
        cfg["output"]["directory"] = out_dir
    # ints are accepted where floats are expected; store floats for stable hashing
    for section, keys in SCHEMA.items():
        for key, (default, types) in keys.items():
            v = cfg[section][key]
            if isinstance(default, float) and isinstance(v, int) and not isinstance(v, bool):
                cfg[section][key] = float(v)
    return validate_config(cfg)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results (the output section is excluded)."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()[:16]


def env_threads() -> int | None:
    v = os.environ.get("ETHRELAX_THREADS")
    return int(v) if v else None
