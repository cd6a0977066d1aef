"""Run configuration: a flat TOML document with dotted keys.

Every key has a default except ``experiment``.  Times in ``grid.*`` are in
kinetic units, i.e. multiples of ``rho^{-1/2}``; ``nu0.mean`` and ``nu0.cov``
are in kinetic units as well when ``nu0.kinetic`` is true (positions scaled by
``rho^{-1/2}``).
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .constants import AdmissibilityError, compute_constants, tau_st

EXPERIMENTS = (
    "constants", "schedule", "entropy_decay", "corrector_check", "stlsi",
    "interpolation_suite", "renyi_decay", "mc_hypercontractivity",
)

COMMON = {
    "experiment": None,
    "seed": 0,
    "output_dir": "out",
    "threads": 1,
    "rho": 1.0,
    "Gamma": 1.0,
    "d": 1,
    "tau": None,
}

_NU0 = {"nu0.mean": None, "nu0.cov": None, "nu0.kinetic": True}

SETTINGS: dict[str, dict] = {
    "constants": {"Gammas": [0.01, 0.1, 1.0, 10.0, 100.0]},
    "schedule": {"p": 2.0, "grid.t_max": None},
    "entropy_decay": {**_NU0, "grid.t_max": 25.0, "grid.n": 2501},
    "corrector_check": {**_NU0, "grid.t_max": 5.0, "grid.delta": 1e-3},
    "stlsi": {**_NU0, "n_time": 129},
    "interpolation_suite": {
        "phi.c": 0.0, "phi.b": None, "phi.Q": None,
        "psi.c": 0.0, "psi.b": None, "psi.Q": None,
        "normalize": True, "p_values": [1.5, 2.0, 4.0], "n_test_functions": 0,
        "n_s": 129, "rtol": 1e-8,
    },
    "renyi_decay": {**_NU0, "q": 2.0, "p": 2.0, "grid.t_max": 200.0, "grid.n": 801},
    "mc_hypercontractivity": {
        "epsilon": 0.5, "f.c": 0.0, "f.b": None, "f.Q": None, "p": 2.0,
        "n_outer": 2000, "n_inner": 200, "h": None, "t_burn": None,
    },
}

_INT_KEYS = {"seed", "threads", "d", "grid.n", "n_time", "n_test_functions", "n_s", "n_outer", "n_inner"}
_BOOL_KEYS = {"nu0.kinetic", "normalize"}
_STR_KEYS = {"experiment", "output_dir"}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(message)


@dataclass
class RunConfig:
    experiment: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def to_dict(self) -> dict:
        return dict(self.values)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value):
    if value is None:
        return None
    if key in _STR_KEYS:
        if not isinstance(value, str):
            raise ConfigError(f"key {key!r} must be a string", key)
        return value
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"key {key!r} must be a boolean", key)
        return value
    if key in _INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key {key!r} must be an integer", key)
        return value
    if isinstance(value, bool):
        raise ConfigError(f"key {key!r} must be numeric", key)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, list):
        try:
            return json.loads(json.dumps(value), parse_int=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"key {key!r} must be a numeric array", key) from exc
    raise ConfigError(f"key {key!r} has unsupported value {value!r}", key)


def resolve(values: dict) -> RunConfig:
    """Validate a flat mapping and apply defaults."""
    exp = values.get("experiment")
    if exp is None:
        raise ConfigError("missing required key 'experiment'", "experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; expected one of {', '.join(EXPERIMENTS)}",
                          "experiment")
    schema = {**COMMON, **SETTINGS[exp]}
    for k in values:
        if k not in schema:
            raise ConfigError(f"unknown key {k!r} for experiment {exp!r}", k)
    out = {k: _coerce(k, values.get(k, default)) for k, default in schema.items()}

    for k in ("rho", "Gamma"):
        if not out[k] > 0:
            raise ConfigError(f"key {k!r} must be positive", k)
    if out["d"] < 1:
        raise ConfigError("key 'd' must be >= 1", "d")
    if out["threads"] < 1:
        raise ConfigError("key 'threads' must be >= 1", "threads")
    if out["tau"] is None:
        out["tau"] = tau_st(out["Gamma"])
    try:
        compute_constants(out["Gamma"], out["tau"], out["rho"])
    except AdmissibilityError as exc:
        raise ConfigError(f"key 'tau': {exc}", "tau") from exc
    if exp == "renyi_decay" and not 1 < out["p"] <= out["q"]:
        raise ConfigError("keys 'p' and 'q' must satisfy 1 < p <= q", "p")
    if exp in ("schedule", "mc_hypercontractivity") and not out["p"] > 1:
        raise ConfigError("key 'p' must exceed 1", "p")
    for k in ("grid.n", "n_outer", "n_inner", "n_time", "n_s"):
        if k in out and out[k] is not None and out[k] < 2:
            raise ConfigError(f"key {k!r} must be >= 2", k)
    return RunConfig(exp, out)


def parse_config(text: str) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return resolve(_flatten(doc))


def emit(config: RunConfig) -> str:
    """Serialize to the flat key-value form accepted by ``parse_config``."""
    lines = []
    for k, v in config.values.items():
        if v is None:
            continue
        if isinstance(v, float) and not math.isfinite(v):
            raise ConfigError(f"key {k!r} is not finite", k)
        lines.append(f"{k} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"
