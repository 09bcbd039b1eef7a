"""Command-line surface.

Subcommands: ``simulate``, ``train``, ``sweep``, ``active-learn``,
``checkerboard-eval``.  Every command reads an optional JSON config
(``--config``), applies flag overrides, runs, and writes a ``manifest.json``
recording the resolved config, package version, metrics and a content hash of
every output file.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .errors import NumericsError
from .experiments import (
    ExperimentConfig,
    run_active_learn,
    run_checkerboard_eval,
    run_simulate,
    run_sweep,
    run_train,
)
from .serialize import build_manifest, write_json

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

_RUNNERS = {
    "simulate": run_simulate,
    "train": run_train,
    "sweep": run_sweep,
    "active-learn": run_active_learn,
    "checkerboard-eval": run_checkerboard_eval,
}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON experiment config")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="master random seed")
    parser.add_argument("--rig", type=str, default=None, help="rig JSON (default: built-in bar)")
    parser.add_argument("--dataset", type=str, default=None, help="correspondence CSV")
    parser.add_argument("--cameras", type=int, default=None, help="use only the first N cameras")
    parser.add_argument("--method", choices=["gp", "mlp", "triangulation"], default=None)
    parser.add_argument("--kernel", choices=["se", "se-ard"], default=None)
    parser.add_argument("--ratio", type=float, default=None, help="train fraction")
    parser.add_argument("--runs", type=int, default=None, help="seeded runs per sweep cell")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpcal",
        description="GP-based implicit multi-camera calibration experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset CSV")
    _add_common_flags(p)
    p.add_argument("--experiment", choices=["grid", "checkerboard"], default=None)
    p.add_argument("--noise", type=float, default=None, help="pixel noise std (px)")

    p = sub.add_parser("train", help="train one model on one split and evaluate")
    _add_common_flags(p)

    p = sub.add_parser("sweep", help="ratio x seed x method sweep (long CSV)")
    _add_common_flags(p)

    p = sub.add_parser("active-learn", help="uncertainty-sampling acquisition runs")
    _add_common_flags(p)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("checkerboard-eval", help="board-count scenarios (Table-style CSV)")
    _add_common_flags(p)
    p.add_argument("--board-runs", type=int, default=None)

    return parser


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    doc = {}
    if args.config is not None:
        with open(args.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError(f"{args.config}: config must be a JSON object")

    overrides = {
        "out": args.out,
        "seed": args.seed,
        "rig": args.rig,
        "dataset": args.dataset,
        "cameras": args.cameras,
        "method": args.method,
        "ratio": args.ratio,
        "runs": args.runs,
    }
    if args.kernel is not None:
        overrides["kernel"] = args.kernel.replace("-", "_")
    if getattr(args, "experiment", None) is not None:
        overrides["experiment"] = args.experiment
    if getattr(args, "noise", None) is not None:
        overrides["pixel_noise_std"] = args.noise
    if args.command == "checkerboard-eval":
        doc.setdefault("experiment", "checkerboard")
        if getattr(args, "board_runs", None) is not None:
            doc.setdefault("board_eval", {})["runs"] = args.board_runs
    if args.command == "active-learn":
        doc.setdefault("experiment", "grid")
        al = doc.setdefault("al", {})
        if getattr(args, "repeats", None) is not None:
            al["repeats"] = args.repeats
        if getattr(args, "iterations", None) is not None:
            al["max_iterations"] = args.iterations
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    return ExperimentConfig.from_dict(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        metrics, files = _RUNNERS[args.command](cfg)
        manifest = build_manifest(
            command=args.command,
            config=dataclasses.asdict(cfg),
            metrics=metrics,
            out_dir=cfg.out_dir,
            files=files,
        )
        write_json(os.path.join(cfg.out_dir, "manifest.json"), manifest)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"gpcal: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"gpcal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"gpcal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps({"command": args.command, "out": cfg.out_dir, "metrics": metrics}, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
