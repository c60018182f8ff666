"""
Run configuration.

A run is configured from a YAML file (every key optional, defaults from
``settings``) plus command line overrides. Runtime limits that belong to
the machine rather than the experiment come from environment variables.
"""

import copy
import logging
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.fair_models.FairErrors import ConfigError, DataIOError
from fairrec.fairrec_app.fair_models.dataset import Scheme, SplitSpec
from fairrec.fairrec_app.fair_models.minority_index import ImMode, ThresholdConfig, UmMode
from fairrec.fairrec_app.fair_models.neural import MlnTrainConfig
from fairrec.fairrec_app.fair_models.pmf import TrainConfig

logger = logging.getLogger(__name__)


class RuntimeSettings:
    """
    Environment-backed runtime settings.

    ``FAIRREC_THREADS`` caps the worker threads used for batch
    recommendation and sweeps; ``FAIRREC_LOG_LEVEL`` sets the level of the
    ``fairrec`` logger.
    """

    DEFAULT_THREADS = os.cpu_count() or 1
    DEFAULT_LOG_LEVEL = "INFO"

    ENV_THREADS = settings.ENV_THREADS
    ENV_LOG_LEVEL = settings.ENV_LOG_LEVEL

    VALID_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}

    def __init__(self):
        self._threads = self._parse_threads()
        self._log_level = self._parse_log_level()

    def _parse_threads(self) -> int:
        env_value = os.getenv(self.ENV_THREADS, "").strip()
        if not env_value:
            return self.DEFAULT_THREADS
        try:
            threads = int(env_value)
        except ValueError:
            raise ConfigError(
                f"Invalid value for {self.ENV_THREADS}: '{env_value}'. Must be a positive integer.",
                field_name=self.ENV_THREADS,
            )
        if threads <= 0:
            raise ConfigError(f"{self.ENV_THREADS} must be a positive integer, got: {threads}",
                              field_name=self.ENV_THREADS)
        return threads

    def _parse_log_level(self) -> str:
        env_value = os.getenv(self.ENV_LOG_LEVEL, "").upper().strip()
        if not env_value:
            return self.DEFAULT_LOG_LEVEL
        if env_value not in self.VALID_LOG_LEVELS:
            raise ConfigError(
                f"Invalid value for {self.ENV_LOG_LEVEL}: '{env_value}'. "
                f"Valid values are: {', '.join(sorted(self.VALID_LOG_LEVELS))}",
                field_name=self.ENV_LOG_LEVEL,
            )
        return env_value

    @property
    def threads(self) -> int:
        return self._threads

    @property
    def log_level(self) -> str:
        return self._log_level

    def get_configuration_summary(self) -> dict:
        return {
            "threads": self.threads,
            "log_level": self.log_level,
            "environment_variables": {
                self.ENV_THREADS: os.getenv(self.ENV_THREADS, "not set"),
                self.ENV_LOG_LEVEL: os.getenv(self.ENV_LOG_LEVEL, "not set"),
            },
        }


DEFAULTS: Dict[str, Any] = {
    "paths": {
        "ratings": None,
        "users": None,
        "out": "fairrec-out",
    },
    "dataset": {
        "scheme": Scheme.GENDER.value,
        "split": list(settings.PMF_SPLIT_FRACTIONS),
    },
    "thresholds": {
        "like": settings.LIKE_THRESHOLD,
        "dislike": settings.DISLIKE_THRESHOLD,
        "min_side_votes": settings.MIN_SIDE_VOTES,
    },
    "indexes": {
        "im_mode": settings.IM_MODE,
        "um_mode": settings.UM_MODE,
        "histogram_bins": settings.HISTOGRAM_BINS,
    },
    "pmf": {
        "factors": settings.FACTORS,
        "learning_rate": settings.PMF_LEARNING_RATE,
        "regularization": settings.PMF_REGULARIZATION,
        "epochs": settings.PMF_EPOCHS,
        "init_scale": settings.PMF_INIT_SCALE,
    },
    "mln": {
        "epochs": settings.MLN_EPOCHS,
        "batch_size": settings.MLN_BATCH_SIZE,
        "learning_rate": settings.MLN_LEARNING_RATE,
        "decay": settings.MLN_DECAY,
        "epsilon": settings.MLN_EPSILON,
        "fractions": list(settings.SPLIT_FRACTIONS),
        "hidden": list(settings.MLN_HIDDEN_LAYERS),
        "dropout": settings.MLN_DROPOUT,
        "accuracy_scale": settings.ACCURACY_SCALE,
        "max_ratings": settings.MLN_MAX_RATINGS,
        "beta_grid": list(settings.BETA_GRID),
    },
    "recommend": {
        "method": "dl",
        "beta": settings.DEFAULT_BETA,
        "alpha": settings.DEFAULT_ALPHA,
        "n": settings.TOP_N,
        "users": None,
    },
    "evaluate": {
        "alpha_grid": list(settings.ALPHA_GRID),
        "beta_grid": list(settings.BETA_GRID),
        "max_users": 1000,
    },
    "seed": settings.SEED,
}


def _merge(base: dict, update: dict, prefix: str = "") -> dict:
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError("Unknown configuration key", field_name=dotted)
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("Expected a mapping", field_name=dotted)
            _merge(base[key], value, prefix=f"{dotted}.")
        else:
            base[key] = value
    return base


@dataclass(frozen=True)
class PathsConfig:
    ratings: Optional[str] = None
    users: Optional[str] = None
    out: str = "fairrec-out"

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def artifact(self, name: str) -> Path:
        return self.out_dir / settings.ARTIFACTS[name]


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    scheme: Scheme = Scheme.GENDER
    split: SplitSpec = field(default_factory=lambda: SplitSpec(settings.PMF_SPLIT_FRACTIONS))
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    im_mode: ImMode = ImMode.POOLED
    um_mode: UmMode = UmMode.PER_FORMULA
    histogram_bins: int = settings.HISTOGRAM_BINS
    pmf: TrainConfig = field(default_factory=TrainConfig)
    mln: MlnTrainConfig = field(default_factory=MlnTrainConfig)
    mln_beta_grid: tuple = settings.BETA_GRID
    method: str = "dl"
    beta: float = settings.DEFAULT_BETA
    alpha: float = settings.DEFAULT_ALPHA
    n: int = settings.TOP_N
    users: Optional[tuple] = None
    alpha_grid: tuple = settings.ALPHA_GRID
    beta_grid: tuple = settings.BETA_GRID
    max_eval_users: int = 1000
    seed: int = settings.SEED

    def __post_init__(self):
        if self.method not in ("dl", "heuristic"):
            raise ConfigError(f"Unknown recommendation method '{self.method}'", field_name="recommend.method",
                              accepted="dl,heuristic")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("Beta must be in [0, 1]", field_name="recommend.beta", beta=self.beta)
        if self.alpha < 0:
            raise ConfigError("Alpha must be >= 0", field_name="recommend.alpha", alpha=self.alpha)
        if self.n < 1:
            raise ConfigError("N must be at least 1", field_name="recommend.n", n=self.n)
        for name, grid in (("evaluate.beta_grid", self.beta_grid), ("mln.beta_grid", self.mln_beta_grid)):
            if not grid or any(not 0.0 <= b <= 1.0 for b in grid):
                raise ConfigError("Beta grid values must be in [0, 1]", field_name=name)
        if not self.alpha_grid or any(a < 0 for a in self.alpha_grid):
            raise ConfigError("Alpha grid values must be >= 0", field_name="evaluate.alpha_grid")
        if self.histogram_bins < 1:
            raise ConfigError("Histogram needs at least one bin", field_name="indexes.histogram_bins")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        try:
            seed = int(data["seed"])
            return cls(
                paths=PathsConfig(**data["paths"]),
                scheme=Scheme.parse(data["dataset"]["scheme"]),
                split=SplitSpec(tuple(data["dataset"]["split"]), seed=seed),
                thresholds=ThresholdConfig(
                    like_threshold=int(data["thresholds"]["like"]),
                    dislike_threshold=int(data["thresholds"]["dislike"]),
                    min_side_votes=int(data["thresholds"]["min_side_votes"]),
                ),
                im_mode=ImMode.parse(data["indexes"]["im_mode"]),
                um_mode=UmMode.parse(data["indexes"]["um_mode"]),
                histogram_bins=int(data["indexes"]["histogram_bins"]),
                pmf=TrainConfig(
                    factors=int(data["pmf"]["factors"]),
                    learning_rate=float(data["pmf"]["learning_rate"]),
                    regularization=float(data["pmf"]["regularization"]),
                    epochs=int(data["pmf"]["epochs"]),
                    init_scale=float(data["pmf"]["init_scale"]),
                    seed=seed + 1,
                ),
                mln=MlnTrainConfig(
                    seed=seed + 2,
                    **{k: (tuple(v) if isinstance(v, list) else v) for k, v in data["mln"].items()
                       if k != "beta_grid"},
                ),
                mln_beta_grid=tuple(float(b) for b in data["mln"]["beta_grid"]),
                method=data["recommend"]["method"],
                beta=float(data["recommend"]["beta"]),
                alpha=float(data["recommend"]["alpha"]),
                n=int(data["recommend"]["n"]),
                users=tuple(int(u) for u in data["recommend"]["users"]) if data["recommend"]["users"] else None,
                alpha_grid=tuple(float(a) for a in data["evaluate"]["alpha_grid"]),
                beta_grid=tuple(float(b) for b in data["evaluate"]["beta_grid"]),
                max_eval_users=int(data["evaluate"]["max_users"]),
                seed=seed,
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration value: {e}")

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[dict] = None) -> "RunConfig":
        """Defaults, then the YAML file at ``path``, then ``overrides`` (same nesting)."""
        data = copy.deepcopy(DEFAULTS)
        if path:
            try:
                with open(path, "r", encoding="utf-8") as f:
                    file_data = yaml.safe_load(f) or {}
            except OSError as e:
                raise DataIOError(f"cannot read configuration: {e}", path=str(path))
            except yaml.YAMLError as e:
                raise ConfigError(f"Invalid YAML in configuration file: {e}")
            if not isinstance(file_data, dict):
                raise ConfigError("Configuration file must hold a mapping")
            _merge(data, file_data)
        if overrides:
            _merge(data, overrides)
        config = cls.from_dict(data)
        logger.debug(f"Loaded run configuration from {path or 'defaults'}")
        return config

    def snapshot(self) -> dict:
        def plain(value):
            if isinstance(value, Enum):
                return value.value
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            if isinstance(value, (list, tuple)):
                return [plain(v) for v in value]
            return value
        return plain(asdict(self))
