"""Declarative run configuration loaded from a single YAML file."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # paths
    events_path: Path
    output_dir: Path
    ses_path: Path | None = None
    regions_path: Path | None = None
    # schema and classes
    schema: str = "crime"
    extra_class_map: dict = field(default_factory=dict)
    # grid
    min_lat: float = 0.0
    min_lon: float = 0.0
    max_lat: float = 1.0
    max_lon: float = 1.0
    cell_height: float = 0.00276
    cell_width: float = 0.0035
    # time windows (dates inclusive)
    quantum_days: int = 1
    train_start: dt.date = dt.date(2014, 1, 1)
    train_end: dt.date = dt.date(2016, 12, 31)
    holdout_end: dt.date = dt.date(2017, 12, 31)
    # quantize
    min_event_fraction: float = 0.05
    # sweep
    dmax: int = 60
    max_depth: int = 7
    epsilon: float = 0.05
    n_min: int = 10
    gamma_min: float = 0.01
    gamma_direction: str = "ge"
    # ensemble
    rounds: int = 200
    tree_depth: int = 3
    learning_rate: float = 0.1
    subsample: float = 0.8
    seed: int = 0
    max_columns: int = 500
    threshold_objective: tuple = ("max_recall_fpr", 0.2)
    validation_fraction: float = 0.2
    # prediction / evaluation
    delta: int = 7
    hit_window: int = 1
    # risk map
    riskmap_area_fraction: float = 0.1
    sigma_grid_n: int = 9
    sigma_lo_tiles: float = 0.5
    sigma_hi_tiles: float = 8.0
    riskmap_tail_days: int = 60
    # perturbation
    perturb_deltas_v: list = field(default_factory=lambda: [-0.1, 0.0, 0.1])
    perturb_deltas_u: list = field(default_factory=lambda: [-0.1, 0.0, 0.1])
    perturb_classes: tuple = ("violent", "property")
    response_class: str = "arrests"
    perturb_replicates: int = 20
    perturb_seed: int = 0
    regression_cell: tuple = (0.1, 0.1)
    # execution
    parallelism: int = 1

    def __post_init__(self):
        if self.train_end >= self.holdout_end:
            raise ConfigError("training window must end before holdout ends")
        if self.train_start >= self.train_end:
            raise ConfigError("train_start must precede train_end")
        if self.quantum_days != 1:
            raise ConfigError("only a 1-day time quantum is supported")

    @property
    def train_days(self) -> int:
        return (self.train_end - self.train_start).days + 1

    @property
    def holdout_days(self) -> int:
        return (self.holdout_end - self.train_end).days

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw, base_dir=path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "RunConfig":
        def getpath(key, required=False):
            val = raw.get(key)
            if val is None:
                if required:
                    raise ConfigError(f"config missing required path {key!r}")
                return None
            p = Path(val)
            return p if p.is_absolute() else base_dir / p

        def getdate(key, default):
            val = raw.get(key)
            if val is None:
                return default
            if isinstance(val, dt.date):
                return val
            return dt.date.fromisoformat(str(val))

        kwargs = {}
        for name in ("schema", "extra_class_map", "min_lat", "min_lon",
                     "max_lat", "max_lon", "cell_height", "cell_width",
                     "quantum_days", "min_event_fraction", "dmax", "max_depth",
                     "epsilon", "n_min", "gamma_min", "gamma_direction",
                     "rounds", "tree_depth", "learning_rate", "subsample",
                     "seed", "max_columns", "validation_fraction", "delta",
                     "hit_window", "riskmap_area_fraction", "sigma_grid_n",
                     "sigma_lo_tiles", "sigma_hi_tiles", "riskmap_tail_days",
                     "perturb_deltas_v", "perturb_deltas_u", "response_class",
                     "perturb_replicates", "perturb_seed", "parallelism"):
            if name in raw:
                kwargs[name] = raw[name]
        for name in ("threshold_objective", "perturb_classes", "regression_cell"):
            if name in raw:
                kwargs[name] = tuple(raw[name])
        unknown = set(raw) - set(kwargs) - {
            "events", "ses", "regions", "output", "train_start", "train_end",
            "holdout_end"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            events_path=getpath("events", required=True),
            output_dir=getpath("output", required=True),
            ses_path=getpath("ses"),
            regions_path=getpath("regions"),
            train_start=getdate("train_start", cls.train_start),
            train_end=getdate("train_end", cls.train_end),
            holdout_end=getdate("holdout_end", cls.holdout_end),
            **kwargs,
        )

    def canonical_json(self) -> str:
        d = {}
        for key, val in self.__dict__.items():
            if isinstance(val, Path):
                val = str(val)
            elif isinstance(val, dt.date):
                val = val.isoformat()
            elif isinstance(val, tuple):
                val = list(val)
            d[key] = val
        return json.dumps(d, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()
