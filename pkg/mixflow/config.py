"""
mixflow.config

Configuration file support for mixflow. Loads run settings and
hyperparameter overrides from JSON or YAML files.

Usage:
    from mixflow.config import load_config, get_config, hyperparameters
    load_config('run.yaml')
    hyper = hyperparameters({'d_f': 40.0})
    seed = get_config('seed', 0)

Keys use the short hyperparameter names (d_f, d_b, N_f, N_b, W_l, W_h,
P_rv, ...). Precedence: explicit override > config file > DEFAULTS.
"""
import copy
import json
import os
from typing import Any, Dict, Mapping, Optional

from mixflow.errors import ConfigurationError

try:
    import yaml

    _HAS_YAML = True
except ImportError:
    _HAS_YAML = False

DEFAULTS: Dict[str, Any] = {
    # reward coefficients
    "alpha": 1.0,
    "beta": 2.0,
    "gamma": 5.0,
    "W_l": 20.0,
    "W_h": 30.0,
    "C_tp": 10.0,
    "C_col": 10.0,
    # action bounds
    "a_max": 10.0,
    "a_min": -10.0,
    # observation
    "d_f": 50.0,
    "d_b": 20.0,
    "d": 5.0,
    "N_f": 10,
    "N_b": 5,
    # learner
    "per_alpha": 0.5,
    "per_beta0": 0.4,
    "per_beta_steps": 100000,
    "buffer_capacity": 50000,
    "hidden_layers": [256, 256],
    "discount": 0.99,
    "batch_size": 256,
    "learning_rate": 3e-4,
    "tau": 5e-3,
    "target_entropy": -1.0,
    "warmup": 5000,
    "updates_per_step": 1,
    "checkpoint_every": 10000,
    "P_rv": [0.4, 0.5, 0.7, 0.8, 0.9, 1.0],
    # W_l/W_h from traffic-light runs of each training scenario
    "calibrate_wait": False,
    "calibration_seeds": 3,
    # simulation
    "dt": 1.0,
    "control_zone_radius": 100.0,
    "episode_steps": 1000,
    "eval_steps": 3000,
    # run
    "seed": 0,
    "seeds": 5,
    "threads": 1,
}

_CONFIG: Dict[str, Any] = {}


def load_config(path: str) -> None:
    """Load configuration from a JSON or YAML file."""
    global _CONFIG
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    ext = os.path.splitext(path)[1].lower()
    with open(path, "r", encoding="utf-8") as f:
        if ext == ".json":
            data = json.load(f)
        elif ext in (".yaml", ".yml"):
            if not _HAS_YAML:
                raise ImportError(
                    "PyYAML is required for YAML config files. Install with 'pip install pyyaml'."
                )
            data = yaml.safe_load(f)
        else:
            raise ConfigurationError(f"Unsupported config file type: {ext}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must hold a mapping")
    _CONFIG = data


def get_config(key: str, default: Optional[Any] = None) -> Any:
    """Get a config value by key, or return default if not set."""
    return _CONFIG.get(key, default)


def set_config(key: str, value: Any) -> None:
    """Set a config value at runtime."""
    _CONFIG[key] = value


def reset_config() -> None:
    """Drop every loaded value."""
    _CONFIG.clear()


def merge_with_args(args: dict) -> dict:
    """Merge config values with CLI args (args take precedence)."""
    merged = dict(_CONFIG)
    merged.update({k: v for k, v in args.items() if v is not None})
    return merged


# -----------------------------
# Hyperparameter schema
# -----------------------------


def _check_type(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"'{key}' must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"'{key}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"'{key}' must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)) or not value:
            raise ConfigurationError(f"'{key}' must be a non-empty list, got {value!r}")
        return [_check_type(f"{key}[{i}]", v, default[0]) for i, v in enumerate(value)]
    return value


def parse_override(text: str) -> tuple:
    """Parse a `key=value` override; the value is read as JSON when possible."""
    if "=" not in text:
        raise ConfigurationError(f"Override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _resolve(layers) -> Dict[str, Any]:
    hyper = copy.deepcopy(DEFAULTS)
    for layer in layers:
        for key, value in layer.items():
            hyper[key] = _check_type(key, value, DEFAULTS[key])
    if hyper["a_min"] >= hyper["a_max"]:
        raise ConfigurationError("'a_min' must be below 'a_max'")
    if hyper["calibration_seeds"] < 1:
        raise ConfigurationError("'calibration_seeds' must be >= 1")
    return hyper


def hyperparameters(overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    DEFAULTS updated with the loaded config file, then with overrides.
    Every value is type-checked against its default.
    """
    overrides = overrides or {}
    unknown = sorted(k for k in overrides if k not in DEFAULTS)
    if unknown:
        raise ConfigurationError(f"Unknown hyperparameter(s): {', '.join(unknown)}")
    # config files may also carry CLI settings (paths, subcommand flags)
    from_file = {k: get_config(k) for k in DEFAULTS if get_config(k) is not None}
    return _resolve([from_file, overrides])


def hyper_from_document(doc: Any) -> Dict[str, Any]:
    """
    Rebuild a resolved hyperparameter set saved as JSON (see dumps_hyper).
    The loaded config file is ignored; missing keys fall back to DEFAULTS.
    """
    if not isinstance(doc, dict):
        raise ConfigurationError("Hyperparameter document must hold a mapping")
    unknown = sorted(k for k in doc if k not in DEFAULTS)
    if unknown:
        raise ConfigurationError(f"Unknown hyperparameter(s): {', '.join(unknown)}")
    return _resolve([doc])


def dumps_hyper(hyper: Mapping[str, Any]) -> str:
    """Resolved hyperparameters as JSON; floats keep their exact repr."""
    return json.dumps({k: hyper.get(k, DEFAULTS[k]) for k in sorted(DEFAULTS)}, indent=2) + "\n"
