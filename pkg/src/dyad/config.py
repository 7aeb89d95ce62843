"""Pipeline configuration: one flat JSON object, validated on load."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace

from .trainer import TrainerConfig

SEED_ENV = "DYAD_SEED"
PSEUDO_SCORERS = ("ocsvm", "lof", "pca")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    segments: int = 32
    pca_k: int = 16
    iforest_trees: int = 100
    iforest_subsample: int = 256
    meb_epsilon: float = 1e-3
    pseudo_scorer: str = "ocsvm"
    lof_k: int = 20
    pca_recon_k: int = 4
    flow_block: int = 8
    flow_search: int = 4
    motion_hist_max: float = 8.0
    use_dynamicity: bool = True
    tau: float = 0.5
    hidden: tuple[int, ...] = (32, 8)
    learning_rate: float = 0.005
    passes: int = 10
    iterations: int = 30
    batch_size: int = 32
    seed: int = 0
    manifest: str | None = None
    work_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        self.validate()

    def validate(self) -> None:
        counts = ("segments", "pca_k", "iforest_trees", "lof_k", "pca_recon_k", "flow_block",
                  "passes", "iterations", "batch_size")
        for name in counts:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.iforest_subsample, int) or self.iforest_subsample < 2:
            raise ConfigError("iforest_subsample must be an integer >= 2")
        if not isinstance(self.flow_search, int) or self.flow_search < 0:
            raise ConfigError("flow_search must be a nonnegative integer")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if not 0.0 < self.meb_epsilon < 1.0:
            raise ConfigError("meb_epsilon must lie in (0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        if self.learning_rate <= 0 or self.motion_hist_max <= 0:
            raise ConfigError("learning_rate and motion_hist_max must be positive")
        if self.pseudo_scorer not in PSEUDO_SCORERS:
            raise ConfigError(f"pseudo_scorer must be one of {PSEUDO_SCORERS}")
        if not isinstance(self.use_dynamicity, bool):
            raise ConfigError("use_dynamicity must be a boolean")
        if not self.hidden or any(not isinstance(h, int) or h < 1 for h in self.hidden):
            raise ConfigError("hidden must be a non-empty list of positive integers")

    def trainer(self) -> TrainerConfig:
        return TrainerConfig(self.passes, self.iterations, self.batch_size, self.tau, self.seed,
                             self.hidden, self.learning_rate, self.use_dynamicity)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["hidden"] = list(self.hidden)
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


FIELD_NAMES = {f.name for f in fields(PipelineConfig)}


def config_from_dict(doc: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - FIELD_NAMES
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = base or PipelineConfig()
    try:
        return replace(base, **doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults < config file < DYAD_SEED (only when no seed given) < overrides."""
    doc = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged = {**doc, **overrides}
    if "seed" not in merged and os.environ.get(SEED_ENV):
        try:
            merged["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    return config_from_dict(merged)
