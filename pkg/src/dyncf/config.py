"""Run configuration: an INI file with a ``[run]`` section, overridable from the CLI.

Example::

    [run]
    dataset = data/steam.csv
    model = tireca
    seed = 7
    ranks = 32, 32, 5
    L = 8

    [sweep]
    rank = 10, 20, 30
"""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .streaming import MODEL_KINDS, STRATEGIES, ModelConfig

OUTPUT_ENV = "DYNCF_OUTPUT_DIR"
REQUIRED = ("dataset", "model", "seed")

# Default hyper-parameter grids for `sweep`
DEFAULT_GRIDS = {
    "rank": list(range(10, 301, 10)),
    "ranks": [(r, r, r3) for r in (32, 64, 100, 128, 256) for r3 in (5, 10)],
    "f": [0.0, 2.0, 4.0],
}


class ConfigError(ValueError):
    """Missing or invalid configuration value; the message names the key."""


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "runs")


@dataclass
class RunConfig:
    dataset: str
    model: str
    seed: int
    rank: int = 10
    ranks: tuple = (32, 32, 5)
    L: int = 10
    f: float = 0.0
    strategy: str | None = None
    sigma: float = 0.0
    block: bool = False
    train_frac: float = 0.4
    valid_frac: float = 0.0001
    n_chunks: int = 50
    top_n: int = 5
    stability_users: int = 50
    hooi_max_iters: int = 50
    hooi_tol: float = 1e-6
    output_dir: str = field(default_factory=default_output_dir)
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model: unknown kind {self.model!r}; expected one of {', '.join(MODEL_KINDS)}")
        if self.strategy is not None and self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy: expected one of {', '.join(STRATEGIES)}")
        for key in ("rank", "L", "n_chunks", "top_n", "stability_users", "hooi_max_iters"):
            value = getattr(self, key)
            if value < (0 if key == "n_chunks" else 1):
                raise ConfigError(f"{key}: must be positive, got {value}")
        for key in ("train_frac", "valid_frac"):
            value = getattr(self, key)
            if not 0 < value < 1:
                raise ConfigError(f"{key}: must be in (0, 1), got {value}")
        if len(self.ranks) != 3 or min(self.ranks) < 1:
            raise ConfigError(f"ranks: expected three positive integers, got {self.ranks}")
        if self.f < 0 or self.sigma < 0 or self.hooi_tol < 0:
            raise ConfigError("f, sigma and hooi_tol must be non-negative")
        try:
            self.model_config()
        except ValueError as exc:
            raise ConfigError(f"strategy: {exc}") from None

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            kind=self.model, rank=self.rank, ranks=tuple(self.ranks), L=self.L, f=self.f,
            strategy=self.strategy, sigma=self.sigma, block=self.block,
            hooi_max_iters=self.hooi_max_iters, hooi_tol=self.hooi_tol, seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranks"] = list(self.ranks)
        d.pop("output_dir")
        d["sweep"] = {k: [list(v) if isinstance(v, tuple) else v for v in vals]
                      for k, vals in self.sweep.items()}
        return d


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ranks(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(int(x) for x in text)
    parts = [p for p in str(text).replace("x", ",").split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def parse_value(key: str, raw):
    """Convert a raw string (or already typed value) for ``key``."""
    if key not in _TYPES or key == "sweep":
        raise ConfigError(f"{key}: unknown configuration key")
    if not isinstance(raw, str):
        return _parse_ranks(raw) if key == "ranks" else raw
    try:
        if key == "ranks":
            return _parse_ranks(raw)
        if key == "block":
            return _parse_bool(raw)
        if key == "strategy":
            return raw.strip() or None
        kind = _TYPES[key]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_grid(key: str, raw: str) -> list:
    if key == "ranks":
        return [_parse_ranks(part) for part in raw.split(";") if part.strip()]
    return [parse_value(key, part) for part in raw.split(",") if part.strip()]


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (may be None) and apply non-None ``overrides``."""
    values: dict = {}
    sweep: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        if not parser.read(path):
            raise ConfigError(f"config file {path} could not be read")
        if "run" not in parser:
            raise ConfigError(f"{path}: missing [run] section")
        for key, raw in parser["run"].items():
            values[key] = parse_value(key, raw)
        if "sweep" in parser:
            for key, raw in parser["sweep"].items():
                parse_value(key, "1" if key != "ranks" else "1,1,1")  # validates the key name
                sweep[key] = parse_grid(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = parse_value(key, raw)
    for key in REQUIRED:
        if key not in values:
            raise ConfigError(f"{key}: required configuration key is missing")
    values["sweep"] = sweep
    return RunConfig(**values)


def resolve_dataset(config: RunConfig, config_path=None) -> Path:
    """Dataset paths in a config file are relative to the file's directory."""
    p = Path(config.dataset)
    if not p.is_absolute() and config_path is not None and not p.exists():
        p = Path(config_path).parent / p
    return p
