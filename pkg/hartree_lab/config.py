import hashlib
import json
import os
from typing import Dict, List, Optional

import yaml
from dotenv import load_dotenv

from hartree_lab.errors import ConfigError, SizingError
from hartree_lab.spectral_grid import make_grid

load_dotenv()

THREADS_ENV = "HARTREE_LAB_THREADS"
FAMILIES = ("original", "rescaled", "limit", "massless")


def worker_count(requested: Optional[int] = None) -> int:
    """Number of scan workers: the request (default CPU count) capped by HARTREE_LAB_THREADS."""
    base = requested if requested else (os.cpu_count() or 1)
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return max(1, base)
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if cap < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return max(1, min(base, cap))


def load_config(config_path: str) -> Dict:
    """Load a flat configuration mapping from a JSON or YAML file."""
    try:
        with open(config_path, 'r') as f:
            config_data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {config_path} is not valid JSON/YAML: {e}")
    if config_data is None:
        return {}
    if not isinstance(config_data, dict):
        raise ConfigError(f"config file {config_path} must hold a flat mapping")
    nested = [key for key, value in config_data.items() if isinstance(value, dict)]
    if nested:
        raise ConfigError(f"config file {config_path} must be flat; nested keys: {nested}")
    return config_data


def _parse_c_list(value) -> List[float]:
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        return [float(p) for p in parts]
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in value]


class RunConfig:
    """Parameters of one CLI run.

    Precedence: built-in defaults < config file < command-line flags.
    """
    DEFAULTS = {
        "family": "limit",
        "m": 1.0,
        "c": [16.0],
        "N": 1.0,
        "L": 12.0,
        "n": 128,
        "tol": 1e-8,
        "max_iter": 3000,
        "step": 0.9,
        "shift": None,
        "seed": 0,
        "symmetrize": False,
        "runs": 10,
        "lambda_c": 1.0,
        "delta": None,
        "critical_L": 16.0,
        "coarse_n": 64,
        "fine_n": 128,
        "bracket": False,
        "state": None,
        "solve_inline": False,
        "kernel_eigs": 6,
        "out": "hartree_output",
        "log_level": "INFO",
    }

    def __init__(self, **values):
        unknown = sorted(set(values) - set(self.DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        merged = dict(self.DEFAULTS)
        merged.update({k: v for k, v in values.items() if v is not None})
        try:
            merged["c"] = _parse_c_list(merged["c"])
        except (TypeError, ValueError):
            raise ConfigError(f"c must be a number or a comma-separated list, got {merged['c']!r}")
        for key, value in merged.items():
            setattr(self, key, value)

    @classmethod
    def from_sources(cls, config_path: Optional[str] = None, overrides: Optional[Dict] = None) -> "RunConfig":
        values = load_config(config_path) if config_path else {}
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(**values)

    @property
    def c_value(self) -> float:
        return self.c[0]

    def validate(self) -> "RunConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        positives = {"m": self.m, "N": self.N, "L": self.L, "step": self.step,
                     "lambda_c": self.lambda_c, "critical_L": self.critical_L}
        for name, value in positives.items():
            if not isinstance(value, (int, float)) or not value > 0:
                raise ConfigError(f"{name} must be positive, got {value!r}")
        if not self.c or any(not v > 0 for v in self.c):
            raise ConfigError(f"c values must be positive, got {self.c}")
        if not 0 < self.tol <= 1e-2:
            raise ConfigError(f"tol must lie in (0, 1e-2], got {self.tol}")
        if int(self.max_iter) < 1 or int(self.runs) < 1:
            raise ConfigError("max_iter and runs must be positive integers")
        if self.shift is not None and not self.shift > 0:
            raise ConfigError(f"shift must be positive, got {self.shift}")
        try:
            make_grid(self.L, self.n)
            make_grid(self.critical_L, self.coarse_n)
            make_grid(self.critical_L, self.fine_n)
        except SizingError as e:
            raise ConfigError(str(e))
        return self

    def as_dict(self) -> Dict:
        return {key: getattr(self, key) for key in self.DEFAULTS}

    def config_hash(self, keys: Optional[List[str]] = None) -> str:
        payload = self.as_dict()
        if keys is not None:
            payload = {k: payload[k] for k in keys}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
