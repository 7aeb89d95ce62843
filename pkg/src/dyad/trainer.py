"""Iterative self-training of the anomaly (omega) and dynamicity (psi) regressors.

Each pass trains both regressors on the current bags, rescores every
segment with the fresh snapshots and rebuilds the bags from those scores
alone. Every pass's snapshots are kept; inference averages them.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .bagging import Bags, PseudoScore, assign_label, form_bags, read_bags_csv, remap_bags, write_bags_csv
from .ingest import _write_atomic
from .regressor import AdaGradState, MlpRegressor, forward, load_mlp, save_mlp, train_iterations

OMEGA_STREAM = 1
PSI_STREAM = 2


@dataclass(frozen=True)
class TrainerConfig:
    passes: int = 10
    iterations: int = 30
    batch_size: int = 32
    tau: float = 0.5
    seed: int = 0
    hidden: tuple[int, int] = (32, 8)
    learning_rate: float = 0.005
    use_dynamicity: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("passes", "iterations", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden sizes must be positive")


@dataclass(frozen=True)
class PassRecord:
    index: int
    omega: MlpRegressor
    psi: MlpRegressor
    bags_after: Bags | None = None
    metrics: dict | None = None


@dataclass
class RegressorEnsemble:
    passes: list[PassRecord] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.passes)

    def truncated(self, k: int) -> "RegressorEnsemble":
        return RegressorEnsemble(self.passes[:k])


@dataclass
class TrainingState:
    """Live regressors and optimizer state carried from pass to pass."""

    omega: MlpRegressor
    psi: MlpRegressor
    omega_opt: AdaGradState
    psi_opt: AdaGradState

    @classmethod
    def initialize(cls, appearance_dim: int, motion_dim: int, config: TrainerConfig) -> "TrainingState":
        omega = MlpRegressor.initialize([appearance_dim, *config.hidden, 1], seed=[config.seed, OMEGA_STREAM])
        psi = MlpRegressor.initialize([motion_dim, *config.hidden, 1], seed=[config.seed, PSI_STREAM])
        return cls(omega, psi,
                   AdaGradState.for_model(omega, config.learning_rate),
                   AdaGradState.for_model(psi, config.learning_rate))


def bag_targets(bags: Bags, segment_ids) -> np.ndarray:
    return np.array([bags.label(s) for s in segment_ids], dtype=np.float64)


def run_pass(state: TrainingState, appearance, motion, segment_ids, bags: Bags,
             config: TrainerConfig, pass_index: int = 1) -> PassRecord:
    """Train omega and psi on the bag labels and snapshot both.

    The two regressors see identical batch indices (both samplers are
    seeded from ``(seed, pass_index)``) and are trained concurrently.
    """
    if not bags.positive and not bags.negative:
        raise ValueError("both bags are empty")
    targets = bag_targets(bags, segment_ids)

    def job(model, opt, x):
        rng = np.random.default_rng([config.seed, pass_index])
        return train_iterations(model, opt, x, targets, config.iterations, config.batch_size, rng)

    with ThreadPoolExecutor(max_workers=2) as pool:
        fo = pool.submit(job, state.omega, state.omega_opt, appearance)
        fp = pool.submit(job, state.psi, state.psi_opt, motion)
        fo.result()
        fp.result()
    return PassRecord(pass_index, state.omega.copy(), state.psi.copy())


def rescore(record: PassRecord, appearance, motion, segment_ids) -> list[PseudoScore]:
    """Fresh (omega, psi) scores per segment from one pass's snapshots."""
    ys = forward(record.omega, appearance)
    yd = forward(record.psi, motion)
    return [PseudoScore(s, float(a), float(d)) for s, a, d in zip(segment_ids, ys, yd)]


def run_training(appearance, motion, segment_ids, initial_scores, config: TrainerConfig,
                 on_pass: Callable[[RegressorEnsemble], dict] | None = None) -> RegressorEnsemble:
    """Full pass loop from pseudo-score bags to a k-pass ensemble.

    ``on_pass`` receives the ensemble built so far after each pass and may
    return a metrics dict to be stored on that pass; it never influences
    training.
    """
    segment_ids = list(segment_ids)
    if not segment_ids:
        raise ValueError("empty dataset")
    appearance = np.asarray(appearance, dtype=np.float64)
    motion = np.asarray(motion, dtype=np.float64)
    if len(appearance) != len(segment_ids) or len(motion) != len(segment_ids):
        raise ValueError("feature rows do not match segment ids")

    initial_scores = list(initial_scores)
    if not config.use_dynamicity:
        initial_scores = [replace(s, y_d_hat=1.0) for s in initial_scores]
    bags = form_bags(initial_scores, config.tau)
    if bags.members != set(segment_ids):
        raise ValueError("initial scores do not cover the segments")

    state = TrainingState.initialize(appearance.shape[1], motion.shape[1], config)
    ensemble = RegressorEnsemble()
    for i in range(1, config.passes + 1):
        record = run_pass(state, appearance, motion, segment_ids, bags, config, i)
        new_scores = rescore(record, appearance, motion, segment_ids)
        if not config.use_dynamicity:
            new_scores = [replace(s, y_d_hat=1.0) for s in new_scores]
        bags = remap_bags(bags, new_scores, config.tau)
        record = replace(record, bags_after=bags)
        ensemble.passes.append(record)
        if on_pass is not None:
            ensemble.passes[-1] = replace(record, metrics=on_pass(ensemble))
    return ensemble


def ensemble_score(ensemble: RegressorEnsemble, appearance, motion) -> tuple[np.ndarray, np.ndarray]:
    """Mean over passes of omega and psi outputs; both stay in [0, 1]."""
    if ensemble.k < 1:
        raise ValueError("ensemble has no passes")
    ys = np.mean([forward(r.omega, appearance) for r in ensemble.passes], axis=0)
    yd = np.mean([forward(r.psi, motion) for r in ensemble.passes], axis=0)
    return ys, yd


def final_label(y_s: float, y_d: float, tau: float = 0.5) -> int:
    return assign_label(y_s, y_d, tau)


def save_ensemble(directory, ensemble: RegressorEnsemble, config: TrainerConfig, segment_ids) -> None:
    directory = Path(directory)
    order = list(segment_ids)
    for rec in ensemble.passes:
        sub = directory / f"pass_{rec.index}"
        save_mlp(sub / "omega.mlp1", rec.omega)
        save_mlp(sub / "psi.mlp1", rec.psi)
        if rec.bags_after is not None:
            write_bags_csv(sub / "bags.csv", rec.bags_after, order)
    doc = {
        "config": asdict(config),
        "seed": config.seed,
        "passes": [{"index": r.index, "metrics": r.metrics} for r in ensemble.passes],
    }
    doc["config"]["hidden"] = list(config.hidden)
    _write_atomic(directory / "manifest.json", (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def load_ensemble(directory) -> tuple[RegressorEnsemble, TrainerConfig]:
    directory = Path(directory)
    doc = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    config = TrainerConfig(**doc["config"])
    passes = []
    for entry in doc["passes"]:
        sub = directory / f"pass_{entry['index']}"
        bags = read_bags_csv(sub / "bags.csv") if (sub / "bags.csv").exists() else None
        passes.append(PassRecord(entry["index"], load_mlp(sub / "omega.mlp1"),
                                 load_mlp(sub / "psi.mlp1"), bags, entry.get("metrics")))
    return RegressorEnsemble(passes), config
