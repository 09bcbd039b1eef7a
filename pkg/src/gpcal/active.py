"""Uncertainty-sampling active learning.

Starting from a random seed subset, the loop repeatedly selects the candidate
pixel observation with maximal combined posterior uncertainty, queries the
rig oracle for its ground truth, retrains the calibration, and records the
uncertainty trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gp
from .calibration import (
    CorrespondenceSet,
    ImplicitCalibration,
    evaluate_rmse,
    extend_calibration,
    split_dataset,
    train_calibration,
)
from .errors import InsufficientDataError, NumericsError
from .rig import RigConfig, query_oracle


@dataclass
class CandidatePool:
    """Finite pool of pixel observations with hidden ground truth."""

    pixels: np.ndarray
    points: np.ndarray
    consumed: set = field(default_factory=set)

    def __post_init__(self):
        self.pixels = np.atleast_2d(np.asarray(self.pixels, dtype=float))
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.pixels.shape[0] != self.points.shape[0]:
            raise ValueError("pool pixels/points length mismatch")
        if not set(self.consumed) <= set(range(self.pixels.shape[0])):
            raise ValueError("consumed indices out of range")

    @staticmethod
    def from_correspondences(data: CorrespondenceSet) -> "CandidatePool":
        return CandidatePool(data.pixels.copy(), data.points.copy())

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def unconsumed(self) -> np.ndarray:
        return np.array(sorted(set(range(len(self))) - self.consumed), dtype=int)

    def observation(self, index: int) -> np.ndarray:
        return self.pixels[index]

    def consume(self, index: int) -> None:
        if index in self.consumed:
            raise ValueError(f"candidate {index} already consumed")
        self.consumed.add(int(index))


@dataclass
class AlConfig:
    """Active-learning protocol settings (defaults mirror the grid experiment:
    20% random seed, 100 iterations, 5 repeats)."""

    seed_fraction: float = 0.20
    max_iterations: int = 100
    repeats: int = 5
    stop_threshold: float | None = None
    seed: int = 0
    refit_hyperparameters: bool = True
    kernel_family: str = gp.SE_ARD
    fit: gp.FitConfig = field(default_factory=gp.FitConfig)

    def __post_init__(self):
        if not 0.0 < self.seed_fraction < 1.0:
            raise ValueError("seed_fraction must be in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


@dataclass
class AlRecord:
    iteration: int
    selected_index: int
    acquisition_value: float
    mean_pool_std: float
    test_rmse: float


@dataclass
class AlTrace:
    """Per-repeat record of an active-learning run.

    ``initial_mean_pool_std`` is measured on the seed-trained model before any
    acquisition; records are appended after each retrain.
    """

    repeat: int
    initial_mean_pool_std: float
    records: list = field(default_factory=list)
    incomplete: bool = False

    @property
    def final_mean_pool_std(self) -> float:
        return self.records[-1].mean_pool_std if self.records else self.initial_mean_pool_std


def acquire_next(model: ImplicitCalibration, pool: CandidatePool) -> int:
    """Index of the unconsumed candidate with maximal combined posterior std.

    Ties break toward the lowest index.
    """
    candidates = pool.unconsumed()
    if candidates.size == 0:
        raise ValueError("candidate pool is exhausted")
    _, _, combined = model.predict(pool.pixels[candidates])
    best = np.flatnonzero(combined == combined.max())[0]
    return int(candidates[best])


def _pool_metrics(model: ImplicitCalibration, pool: CandidatePool):
    """Mean combined std and test RMSE over the remaining pool (NaN if empty)."""
    remaining = pool.unconsumed()
    if remaining.size == 0:
        return float("nan"), float("nan")
    means, _, combined = model.predict(pool.pixels[remaining])
    rmse = evaluate_rmse(means, pool.points[remaining]).rmse
    return float(combined.mean()), float(rmse)


def run_active_learning(
    rig: RigConfig, dataset: CorrespondenceSet, config: AlConfig = AlConfig()
) -> list[AlTrace]:
    """Run the acquisition loop ``config.repeats`` times; one trace per repeat.

    Each repeat seeds its training subset with ``config.seed + repeat``,
    then iterates: acquire -> query oracle -> retrain -> record.  Fit failures
    abort the repeat with the partial trace flagged incomplete.
    """
    n_seed = int(np.ceil(len(dataset) * config.seed_fraction - 0.5))
    if n_seed < 2:
        raise InsufficientDataError(
            f"seed_fraction {config.seed_fraction} yields {n_seed} seed points; need >= 2"
        )
    traces = []
    for repeat in range(config.repeats):
        train, rest = split_dataset(dataset, config.seed_fraction, seed=config.seed + repeat)
        pool = CandidatePool.from_correspondences(rest)
        model = train_calibration(train, config.kernel_family, config.fit)
        initial_std, _ = _pool_metrics(model, pool)
        trace = AlTrace(repeat=repeat, initial_mean_pool_std=initial_std)

        if config.stop_threshold is not None and initial_std <= config.stop_threshold:
            traces.append(trace)
            continue

        refit_cfg = gp.FitConfig(
            restarts=1,
            max_iter=config.fit.max_iter,
            seed=config.fit.seed,
            lengthscale_init_range=config.fit.lengthscale_init_range,
            init_outputscale=config.fit.init_outputscale,
            init_noise=config.fit.init_noise,
            noise_floor=config.fit.noise_floor,
        )
        for iteration in range(1, config.max_iterations + 1):
            if pool.unconsumed().size == 0:
                break
            try:
                idx = acquire_next(model, pool)
                _, _, acq = model.predict(pool.observation(idx)[None, :])
                row, point = query_oracle(rig, pool.observation(idx), pool=pool)
                pool.consume(idx)
                train = train.appended(row, point)
                model = extend_calibration(
                    model,
                    train,
                    refit_hyperparameters=config.refit_hyperparameters,
                    kernel_family=config.kernel_family,
                    config=refit_cfg,
                )
            except NumericsError:
                trace.incomplete = True
                break
            mean_std, rmse = _pool_metrics(model, pool)
            trace.records.append(
                AlRecord(
                    iteration=iteration,
                    selected_index=idx,
                    acquisition_value=float(acq[0]),
                    mean_pool_std=mean_std,
                    test_rmse=rmse,
                )
            )
            if config.stop_threshold is not None and mean_std <= config.stop_threshold:
                break
        traces.append(trace)
    return traces
