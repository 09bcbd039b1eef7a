"""Reproducible experiment runs: simulate, train, sweep, active-learn,
checkerboard-eval.

Each runner takes a resolved :class:`ExperimentConfig`, writes CSV/JSON
artifacts into the output directory through atomic writes, and returns the
metrics plus the list of files written (the CLI turns that into a manifest).
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import gp
from .active import AlConfig, run_active_learning
from .align import kabsch_align
from .calibration import (
    CorrespondenceSet,
    correspondence_csv_text,
    evaluate_rmse,
    read_correspondence_csv,
    split_dataset,
    train_calibration,
)
from .errors import InsufficientDataError, NumericsError
from .mlp import MlpConfig, mlp_train
from .rig import (
    CheckerboardSpec,
    GridSpec,
    RigConfig,
    default_checkerboard_rig,
    default_grid_rig,
    generate_checkerboard_dataset,
    generate_grid_dataset,
    triangulate_baseline,
)
from .serialize import atomic_write_text, calibration_to_dict, mlp_to_dict, write_json

EXPERIMENTS = ("grid", "checkerboard", "active_learning")
METHODS = ("gp", "mlp", "triangulation")
PAPER_RATIOS = (0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)

PREDICTIONS_HEADER = "x,y,z,pred_x,pred_y,pred_z,std_x,std_y,std_z,combined_std"


@dataclass
class ExperimentConfig:
    """Resolved run settings; built from a JSON config file plus CLI flags."""

    experiment: str = "grid"
    method: str = "gp"
    kernel: str = gp.SE_ARD
    rig_path: str | None = None
    dataset_path: str | None = None
    out_dir: str = "runs"
    seed: int = 0
    ratio: float = 0.9
    runs: int = 10
    cameras: int | None = None
    pixel_noise_std: float | None = None  # None: per-experiment rig default
    grid: GridSpec = field(default_factory=GridSpec)
    checkerboard: CheckerboardSpec = field(default_factory=CheckerboardSpec)
    fit_restarts: int = 5
    fit_max_iter: int = 200
    mlp_learning_rate: float = 1e-3
    mlp_epochs: int = 2000
    mlp_batch_size: int | None = None
    al_seed_fraction: float = 0.2
    al_max_iterations: int = 100
    al_repeats: int = 5
    al_stop_threshold: float | None = None
    sweep_ratios: tuple = PAPER_RATIOS
    sweep_methods: tuple = ("gp", "mlp", "triangulation")
    board_counts: tuple = (2, 3, 5, 9)
    camera_counts: tuple = (2, 4, 6)
    board_runs: int = 5

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.kernel not in gp.KERNEL_FAMILIES:
            raise ValueError(f"kernel must be one of {gp.KERNEL_FAMILIES}, got {self.kernel!r}")
        if not all(m in METHODS for m in self.sweep_methods):
            raise ValueError(f"sweep methods must be among {METHODS}")

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(ExperimentConfig)}
        flat_keys = {
            "rig": "rig_path",
            "dataset": "dataset_path",
            "out": "out_dir",
        }
        kwargs = {}
        for key, value in doc.items():
            if key in flat_keys:
                kwargs[flat_keys[key]] = value
            elif key == "grid":
                kwargs["grid"] = GridSpec(
                    counts=tuple(value.get("counts", (5, 5, 7))),
                    origin=tuple(value.get("origin", (-200.0, -200.0, 600.0))),
                    spacing=tuple(value.get("spacing", (100.0, 100.0, 100.0))),
                )
            elif key == "checkerboard":
                kwargs["checkerboard"] = CheckerboardSpec(**value)
            elif key == "fit":
                kwargs["fit_restarts"] = int(value.get("restarts", 5))
                kwargs["fit_max_iter"] = int(value.get("max_iter", 200))
            elif key == "mlp":
                kwargs["mlp_learning_rate"] = float(value.get("learning_rate", 1e-3))
                kwargs["mlp_epochs"] = int(value.get("epochs", 2000))
                kwargs["mlp_batch_size"] = value.get("batch_size")
            elif key == "al":
                kwargs["al_seed_fraction"] = float(value.get("seed_fraction", 0.2))
                kwargs["al_max_iterations"] = int(value.get("max_iterations", 100))
                kwargs["al_repeats"] = int(value.get("repeats", 5))
                kwargs["al_stop_threshold"] = value.get("stop_threshold")
            elif key == "sweep":
                kwargs["sweep_ratios"] = tuple(value.get("ratios", PAPER_RATIOS))
                kwargs["sweep_methods"] = tuple(value.get("methods", ("gp", "mlp", "triangulation")))
            elif key == "board_eval":
                kwargs["board_counts"] = tuple(value.get("board_counts", (2, 3, 5, 9)))
                kwargs["camera_counts"] = tuple(value.get("camera_counts", (2, 4, 6)))
                kwargs["board_runs"] = int(value.get("runs", 5))
            elif key in known:
                kwargs[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        return ExperimentConfig(**kwargs)

    def fit_config(self, seed: int | None = None) -> gp.FitConfig:
        return gp.FitConfig(
            restarts=self.fit_restarts,
            max_iter=self.fit_max_iter,
            seed=self.seed if seed is None else seed,
        )

    def mlp_config(self, seed: int | None = None) -> MlpConfig:
        return MlpConfig(
            learning_rate=self.mlp_learning_rate,
            epochs=self.mlp_epochs,
            batch_size=self.mlp_batch_size,
            seed=self.seed if seed is None else seed,
        )


def resolve_rig(cfg: ExperimentConfig) -> RigConfig:
    """Load the configured rig or build the default bar for the experiment."""
    if cfg.rig_path is not None:
        r = RigConfig.load_json(cfg.rig_path)
    elif cfg.experiment == "checkerboard":
        kwargs = {} if cfg.pixel_noise_std is None else {"pixel_noise_std": cfg.pixel_noise_std}
        r = default_checkerboard_rig(seed=cfg.seed, **kwargs)
    else:
        kwargs = {} if cfg.pixel_noise_std is None else {"pixel_noise_std": cfg.pixel_noise_std}
        r = default_grid_rig(seed=cfg.seed, **kwargs)
    if cfg.cameras is not None:
        r = r.subset(cfg.cameras)
    return r


def _fmt(value) -> str:
    """CSV cell: shortest round-trip float, empty for None/NaN."""
    if value is None:
        return ""
    if isinstance(value, float) and not np.isfinite(value):
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path, header: list, rows: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def _write_predictions_csv(path, truth, predicted, stds=None, combined=None) -> None:
    rows = []
    for i in range(truth.shape[0]):
        row = [_fmt(v) for v in truth[i]] + [_fmt(v) for v in predicted[i]]
        if stds is not None:
            row += [_fmt(v) for v in stds[i]] + [_fmt(combined[i])]
        else:
            row += ["", "", "", ""]
        rows.append(row)
    _write_csv(path, PREDICTIONS_HEADER.split(","), rows)


def run_simulate(cfg: ExperimentConfig) -> tuple[dict, list]:
    """Generate a dataset CSV (plus a rig echo) for the configured experiment."""
    rig_config = resolve_rig(cfg)
    if cfg.experiment == "checkerboard":
        dataset = generate_checkerboard_dataset(rig_config, cfg.checkerboard)
    else:
        dataset = generate_grid_dataset(rig_config, cfg.grid)

    os.makedirs(cfg.out_dir, exist_ok=True)
    dataset_path = os.path.join(cfg.out_dir, "dataset.csv")
    atomic_write_text(dataset_path, correspondence_csv_text(dataset))
    rig_json = os.path.join(cfg.out_dir, "rig.json")
    write_json(rig_json, rig_config.to_dict())
    metrics = {"rows": len(dataset), "cameras": rig_config.camera_count}
    return metrics, ["dataset.csv", "rig.json"]


def _train_single(cfg: ExperimentConfig, dataset: CorrespondenceSet, method: str, seed: int):
    """Train one method on one split; returns (metrics dict, artifacts dict)."""
    if method == "triangulation":
        raise ValueError("triangulation is handled separately (no training)")
    train, test = split_dataset(dataset, cfg.ratio, seed=seed)
    if method == "gp":
        model = train_calibration(train, cfg.kernel, cfg.fit_config(seed))
        means, stds, combined = model.predict(test.pixels)
        report = evaluate_rmse(means, test.points)
        metrics = {
            "method": "gp",
            "kernel": cfg.kernel,
            "train_size": len(train),
            "test_size": len(test),
            "rmse": report.rmse,
            "rmse_per_axis": report.per_axis.tolist(),
            "mean_combined_std": float(combined.mean()),
            "uncertainty": "latent-std, mean over xyz axes",
        }
        return metrics, {
            "model": calibration_to_dict(model),
            "truth": test.points,
            "pred": means,
            "stds": stds,
            "combined": combined,
        }
    model = mlp_train(train, config=cfg.mlp_config(seed))
    pred = model.predict(test.pixels)
    report = evaluate_rmse(pred, test.points)
    metrics = {
        "method": "mlp",
        "train_size": len(train),
        "test_size": len(test),
        "rmse": report.rmse,
        "rmse_per_axis": report.per_axis.tolist(),
        "mean_combined_std": None,
    }
    return metrics, {"model": mlp_to_dict(model), "truth": test.points, "pred": pred}


def _triangulation_eval(cfg: ExperimentConfig, rig_config: RigConfig, dataset: CorrespondenceSet):
    """Triangulate every observation and align the cloud to ground truth."""
    pred = np.vstack([triangulate_baseline(rig_config, dataset.pixels[i]) for i in range(len(dataset))])
    raw = evaluate_rmse(pred, dataset.points)
    transform = kabsch_align(pred, dataset.points)
    aligned = transform.apply(pred)
    post = evaluate_rmse(aligned, dataset.points)
    metrics = {
        "method": "triangulation",
        "evaluated_points": len(dataset),
        "rmse": post.rmse,
        "rmse_per_axis": post.per_axis.tolist(),
        "rmse_before_alignment": raw.rmse,
        "mean_combined_std": None,
        "note": "uses exact simulator camera parameters; no training split involved",
    }
    return metrics, {"truth": dataset.points, "pred": aligned}


def run_train(cfg: ExperimentConfig) -> tuple[dict, list]:
    """Split, train the chosen method, and write model + predictions + metrics."""
    if cfg.dataset_path is None:
        raise ValueError("train needs a dataset CSV (--dataset)")
    dataset = read_correspondence_csv(cfg.dataset_path)
    if cfg.cameras is not None:
        dataset = dataset.with_cameras(cfg.cameras)
    os.makedirs(cfg.out_dir, exist_ok=True)
    files = []

    if cfg.method == "triangulation":
        rig_config = resolve_rig(cfg)
        if rig_config.camera_count != dataset.camera_count:
            raise ValueError(
                f"rig has {rig_config.camera_count} cameras, dataset {dataset.camera_count}"
            )
        metrics, artifacts = _triangulation_eval(cfg, rig_config, dataset)
        _write_predictions_csv(
            os.path.join(cfg.out_dir, "predictions.csv"), artifacts["truth"], artifacts["pred"]
        )
        files.append("predictions.csv")
    else:
        metrics, artifacts = _train_single(cfg, dataset, cfg.method, cfg.seed)
        model_path = os.path.join(cfg.out_dir, "model.json")
        write_json(model_path, artifacts["model"])
        files.append("model.json")
        _write_predictions_csv(
            os.path.join(cfg.out_dir, "predictions.csv"),
            artifacts["truth"],
            artifacts["pred"],
            artifacts.get("stds"),
            artifacts.get("combined"),
        )
        files.append("predictions.csv")

    metrics["seed"] = cfg.seed
    metrics["ratio"] = cfg.ratio
    write_json(os.path.join(cfg.out_dir, "metrics.json"), metrics)
    files.append("metrics.json")
    return metrics, files


def run_sweep(cfg: ExperimentConfig) -> tuple[dict, list]:
    """Train/test sweep over split ratios, seeds and methods (long-format CSV)."""
    if cfg.dataset_path is not None:
        dataset = read_correspondence_csv(cfg.dataset_path)
        if cfg.cameras is not None:
            dataset = dataset.with_cameras(cfg.cameras)
        rig_config = resolve_rig(cfg) if "triangulation" in cfg.sweep_methods else None
    else:
        rig_config = resolve_rig(cfg)
        dataset = generate_grid_dataset(rig_config, cfg.grid)

    if "triangulation" in cfg.sweep_methods:
        if rig_config is None or rig_config.camera_count != dataset.camera_count:
            raise ValueError("triangulation sweep needs a rig matching the dataset")
        tri_metrics, _ = _triangulation_eval(cfg, rig_config, dataset)

    rows = []
    failures = 0
    for method in cfg.sweep_methods:
        for ratio in cfg.sweep_ratios:
            for run in range(cfg.runs):
                seed = cfg.seed + run
                if method == "triangulation":
                    rows.append(
                        ["triangulation", _fmt(ratio), seed, _fmt(tri_metrics["rmse"]), "", "ok"]
                    )
                    continue
                try:
                    train, test = split_dataset(dataset, ratio, seed=seed)
                    if method == "gp":
                        model = train_calibration(train, cfg.kernel, cfg.fit_config(seed))
                        means, _, combined = model.predict(test.pixels)
                        rmse = evaluate_rmse(means, test.points).rmse
                        rows.append([method, _fmt(ratio), seed, _fmt(rmse), _fmt(float(combined.mean())), "ok"])
                    else:
                        model = mlp_train(train, config=cfg.mlp_config(seed))
                        rmse = evaluate_rmse(model.predict(test.pixels), test.points).rmse
                        rows.append([method, _fmt(ratio), seed, _fmt(rmse), "", "ok"])
                except (NumericsError, InsufficientDataError) as exc:
                    failures += 1
                    rows.append([method, _fmt(ratio), seed, "", "", f"error:{type(exc).__name__}"])

    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_csv(os.path.join(cfg.out_dir, "sweep.csv"), ["method", "ratio", "seed", "rmse", "mean_std", "status"], rows)
    metrics = {
        "rows": len(rows),
        "failures": failures,
        "methods": list(cfg.sweep_methods),
        "ratios": list(cfg.sweep_ratios),
        "runs_per_cell": cfg.runs,
    }
    return metrics, ["sweep.csv"]


def run_active_learn(cfg: ExperimentConfig) -> tuple[dict, list]:
    """Uncertainty-sampling runs; one trace CSV per repeat plus a summary."""
    rig_config = resolve_rig(cfg)
    if cfg.dataset_path is not None:
        dataset = read_correspondence_csv(cfg.dataset_path)
        if cfg.cameras is not None:
            dataset = dataset.with_cameras(cfg.cameras)
    else:
        dataset = generate_grid_dataset(rig_config, cfg.grid)

    config = AlConfig(
        seed_fraction=cfg.al_seed_fraction,
        max_iterations=cfg.al_max_iterations,
        repeats=cfg.al_repeats,
        stop_threshold=cfg.al_stop_threshold,
        seed=cfg.seed,
        kernel_family=cfg.kernel,
        fit=cfg.fit_config(),
    )
    traces = run_active_learning(rig_config, dataset, config)

    os.makedirs(cfg.out_dir, exist_ok=True)
    files = []
    header = ["repeat", "iteration", "selected_index", "acquisition_value", "mean_pool_std", "test_rmse"]
    summary = []
    for trace in traces:
        rows = [
            [trace.repeat, rec.iteration, rec.selected_index, _fmt(rec.acquisition_value),
             _fmt(rec.mean_pool_std), _fmt(rec.test_rmse)]
            for rec in trace.records
        ]
        name = f"trace_repeat{trace.repeat}.csv"
        _write_csv(os.path.join(cfg.out_dir, name), header, rows)
        files.append(name)
        summary.append(
            {
                "repeat": trace.repeat,
                "initial_mean_pool_std": trace.initial_mean_pool_std,
                "final_mean_pool_std": trace.final_mean_pool_std,
                "iterations": len(trace.records),
                "incomplete": trace.incomplete,
            }
        )
    write_json(os.path.join(cfg.out_dir, "al_summary.json"), {"repeats": summary})
    files.append("al_summary.json")
    metrics = {"repeats": summary}
    return metrics, files


def board_subset_indices(count: int, positions: int = 20) -> list:
    """Bisection training subsets: endpoints first, then floor midpoints of
    every gap, repeated until ``count`` boards (2 -> 3 -> 5 -> 9 -> ...)."""
    if count < 2:
        raise ValueError("need at least the two endpoint boards")
    if positions < 2:
        raise ValueError("need at least 2 board positions")
    seq = [0, positions - 1]
    while len(seq) < count:
        mids = [(a + b) // 2 for a, b in zip(seq, seq[1:])]
        merged = sorted(set(seq) | set(mids))
        if merged == seq:
            raise ValueError(f"bisection saturated below {count} boards")
        seq = merged
    if len(seq) != count:
        raise ValueError(f"{count} boards unreachable by bisection (sequence hits {len(seq)})")
    return seq


def run_checkerboard_eval(cfg: ExperimentConfig) -> tuple[dict, list]:
    """Board-count scenarios: train GP/MLP on bisection subsets per camera set."""
    if cfg.rig_path is not None:
        rig_full = RigConfig.load_json(cfg.rig_path)
    else:
        kwargs = {} if cfg.pixel_noise_std is None else {"pixel_noise_std": cfg.pixel_noise_std}
        rig_full = default_checkerboard_rig(num_cameras=max(cfg.camera_counts), seed=cfg.seed, **kwargs)
    dataset = generate_checkerboard_dataset(rig_full, cfg.checkerboard)

    os.makedirs(cfg.out_dir, exist_ok=True)
    files = []
    metric_rows = []
    for camera_count in cfg.camera_counts:
        sub = dataset.with_cameras(camera_count)
        for boards in cfg.board_counts:
            train_boards = board_subset_indices(boards, cfg.checkerboard.positions)
            mask = np.isin(sub.board_index, train_boards)
            train = sub.subset(np.flatnonzero(mask))
            test = sub.subset(np.flatnonzero(~mask))
            scenario = f"cams{camera_count}_boards{boards}"

            for method in ("gp", "mlp"):
                rmses, avg_stds = [], []
                first_artifacts = None
                for run in range(cfg.board_runs):
                    seed = cfg.seed + run
                    if method == "gp":
                        model = train_calibration(train, cfg.kernel, cfg.fit_config(seed))
                        means, stds, combined = model.predict(test.pixels)
                        rmses.append(evaluate_rmse(means, test.points).rmse)
                        avg_stds.append(float(combined.mean()))
                        if first_artifacts is None:
                            first_artifacts = (test.points, means, stds, combined)
                    else:
                        model = mlp_train(train, config=cfg.mlp_config(seed))
                        pred = model.predict(test.pixels)
                        rmses.append(evaluate_rmse(pred, test.points).rmse)
                        if first_artifacts is None:
                            first_artifacts = (test.points, pred, None, None)

                metric_rows.append(
                    [
                        scenario,
                        method,
                        _fmt(float(np.mean(rmses))),
                        _fmt(float(np.std(rmses))),
                        _fmt(float(np.mean(avg_stds))) if avg_stds else "",
                        _fmt(float(np.std(avg_stds))) if avg_stds else "",
                    ]
                )
                name = f"predictions_{scenario}_{method}.csv"
                _write_predictions_csv(os.path.join(cfg.out_dir, name), *first_artifacts)
                files.append(name)

    _write_csv(
        os.path.join(cfg.out_dir, "checkerboard_metrics.csv"),
        ["scenario", "method", "rmse_mean", "rmse_std", "avg_std_mean", "avg_std_std"],
        metric_rows,
    )
    files.append("checkerboard_metrics.csv")
    metrics = {
        "scenarios": len(metric_rows) // 2,
        "camera_counts": list(cfg.camera_counts),
        "board_counts": list(cfg.board_counts),
        "runs_per_cell": cfg.board_runs,
    }
    return metrics, files
