"""Implicit multi-camera calibration.

Three independent GPs map the concatenated pixel vector
``(u_1, v_1, ..., u_i, v_i)`` of an ``i``-camera rig to the x, y and z world
coordinates.  Per-prediction uncertainty is the arithmetic mean of the three
per-axis posterior standard deviations.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import gp
from .errors import InsufficientDataError

AXIS_NAMES = ("x", "y", "z")


@dataclass
class CorrespondenceSet:
    """Pixel observations ``(n, 2i)`` paired with world points ``(n, 3)`` in mm.

    ``board_index`` optionally tags each row with the checkerboard position it
    came from (used by the translated-checkerboard experiment).
    """

    pixels: np.ndarray
    points: np.ndarray
    camera_count: int
    board_index: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.atleast_2d(np.asarray(self.pixels, dtype=float))
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.pixels.shape[0] != self.points.shape[0]:
            raise ValueError(
                f"{self.pixels.shape[0]} observations vs {self.points.shape[0]} points"
            )
        if self.points.shape[1] != 3:
            raise ValueError("world points must have 3 columns")
        if self.pixels.shape[1] != 2 * self.camera_count:
            raise ValueError(
                f"expected {2 * self.camera_count} pixel columns for "
                f"{self.camera_count} cameras, got {self.pixels.shape[1]}"
            )
        if not (np.all(np.isfinite(self.pixels)) and np.all(np.isfinite(self.points))):
            raise ValueError("correspondences contain non-finite values")
        if self.board_index is not None:
            self.board_index = np.asarray(self.board_index, dtype=int).ravel()
            if self.board_index.shape[0] != self.pixels.shape[0]:
                raise ValueError("board_index length mismatch")

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def subset(self, indices) -> "CorrespondenceSet":
        indices = np.asarray(indices, dtype=int)
        board = self.board_index[indices] if self.board_index is not None else None
        return CorrespondenceSet(self.pixels[indices], self.points[indices], self.camera_count, board)

    def appended(self, pixels, point) -> "CorrespondenceSet":
        """New set with one extra row (board tags are dropped)."""
        return CorrespondenceSet(
            np.vstack([self.pixels, np.asarray(pixels, dtype=float).ravel()]),
            np.vstack([self.points, np.asarray(point, dtype=float).ravel()]),
            self.camera_count,
        )

    def with_cameras(self, camera_count: int) -> "CorrespondenceSet":
        """Restrict to the first ``camera_count`` cameras' pixel columns."""
        if camera_count > self.camera_count:
            raise ValueError(f"set has only {self.camera_count} cameras")
        return CorrespondenceSet(
            self.pixels[:, : 2 * camera_count], self.points, camera_count, self.board_index
        )


@dataclass
class PredictedPoint:
    """One 3D prediction: mean (mm), per-axis stds (mm), combined std (mm)."""

    mean: np.ndarray
    std: np.ndarray
    combined_std: float


@dataclass
class RmseReport:
    rmse: float
    per_axis: np.ndarray
    per_point: np.ndarray


@dataclass
class ImplicitCalibration:
    """Three per-axis GPs over a shared 2i-dimensional pixel input space."""

    gp_x: gp.FittedGP
    gp_y: gp.FittedGP
    gp_z: gp.FittedGP
    camera_count: int

    @property
    def axes(self):
        return (self.gp_x, self.gp_y, self.gp_z)

    @property
    def input_dim(self) -> int:
        return 2 * self.camera_count

    def predict(self, pixels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched prediction: means (m,3), stds (m,3), combined stds (m,)."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
        if pixels.shape[1] != self.input_dim:
            raise ValueError(
                f"observation length {pixels.shape[1]} != 2 x {self.camera_count} cameras"
            )
        means = np.empty((pixels.shape[0], 3))
        stds = np.empty((pixels.shape[0], 3))
        for k, model in enumerate(self.axes):
            mean, var = model.predict(pixels)
            means[:, k] = mean
            stds[:, k] = np.sqrt(var)
        return means, stds, stds.mean(axis=1)

    def prior_std(self) -> float:
        """Mean of the three de-standardized prior standard deviations."""
        return float(
            np.mean(
                [
                    np.sqrt(m.hyper.outputscale) * m.standardization.target_scale
                    for m in self.axes
                ]
            )
        )


def train_calibration(
    data: CorrespondenceSet,
    kernel_family: str = gp.SE_ARD,
    config: gp.FitConfig = gp.FitConfig(),
) -> ImplicitCalibration:
    """Fit one GP per world axis on identical pixel inputs."""
    n, d = len(data), 2 * data.camera_count
    if n < 2:
        raise InsufficientDataError(f"calibration needs at least 2 correspondences, got {n}")
    recommended = 2 * d + 1
    if n < recommended:
        warnings.warn(
            f"only {n} correspondences for a {d}-dimensional input space; "
            f"{recommended}+ recommended",
            stacklevel=2,
        )
    spec = gp.KernelSpec(kernel_family, d)
    models = [gp.fit(gp.Dataset(data.pixels, data.points[:, k]), spec, config) for k in range(3)]
    return ImplicitCalibration(*models, camera_count=data.camera_count)


def extend_calibration(
    model: ImplicitCalibration,
    data: CorrespondenceSet,
    refit_hyperparameters: bool = True,
    kernel_family: str = gp.SE_ARD,
    config: gp.FitConfig = gp.FitConfig(),
) -> ImplicitCalibration:
    """Retrain on an (augmented) correspondence set.

    With ``refit_hyperparameters`` the per-axis fits are warm-started from the
    current optima plus the configured fresh restarts; otherwise the existing
    hyperparameters and standardization are kept and only the factorization is
    recomputed.
    """
    if refit_hyperparameters:
        spec = gp.KernelSpec(kernel_family, 2 * data.camera_count)
        models = [
            gp.fit(
                gp.Dataset(data.pixels, data.points[:, k]),
                spec,
                replace(config, warm_start=axis_model.hyper),
            )
            for k, axis_model in enumerate(model.axes)
        ]
    else:
        models = [
            gp.recondition(axis_model, data.pixels, data.points[:, k])
            for k, axis_model in enumerate(model.axes)
        ]
    return ImplicitCalibration(*models, camera_count=data.camera_count)


def predict_point(model: ImplicitCalibration, obs) -> PredictedPoint:
    """Per-axis posterior prediction with the averaged-std combined uncertainty."""
    obs = np.asarray(obs, dtype=float).ravel()
    means, stds, combined = model.predict(obs[None, :])
    return PredictedPoint(mean=means[0], std=stds[0], combined_std=float(combined[0]))


def evaluate_rmse(predictions, truth) -> RmseReport:
    """Euclidean-error RMSE between predicted and true 3D points."""
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if predictions.shape != truth.shape:
        raise ValueError(f"shape mismatch {predictions.shape} vs {truth.shape}")
    if predictions.shape[0] == 0:
        raise ValueError("cannot evaluate RMSE on empty input")
    delta = predictions - truth
    per_point = np.linalg.norm(delta, axis=1)
    per_axis = np.sqrt(np.mean(delta**2, axis=0))
    return RmseReport(
        rmse=float(np.sqrt(np.mean(per_point**2))),
        per_axis=per_axis,
        per_point=per_point,
    )


def split_dataset(data: CorrespondenceSet, train_fraction: float, seed: int):
    """Deterministic shuffled train/test split.

    Train size is round-to-nearest with half-way cases rounded down (175 at
    0.9 gives 157, at 0.1 gives 17), clamped to [2, n-1].
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(data)
    if n < 3:
        raise InsufficientDataError("splitting needs at least 3 correspondences")
    train_size = int(np.ceil(n * train_fraction - 0.5))
    train_size = max(2, min(train_size, n - 1))
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[:train_size])), data.subset(np.sort(perm[train_size:]))


def correspondence_header(camera_count: int, with_board: bool = False) -> list[str]:
    cols = []
    for i in range(1, camera_count + 1):
        cols += [f"u{i}", f"v{i}"]
    cols += ["x", "y", "z"]
    if with_board:
        cols.append("board")
    return cols


def correspondence_csv_text(data: CorrespondenceSet) -> str:
    """Render as CSV text with header ``u1,v1,...,u{i},v{i},x,y,z[,board]``.

    Floats use shortest round-trip repr so identical data is byte-identical.
    """
    with_board = data.board_index is not None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(correspondence_header(data.camera_count, with_board))
    for r in range(len(data)):
        row = [repr(float(v)) for v in data.pixels[r]] + [repr(float(v)) for v in data.points[r]]
        if with_board:
            row.append(str(int(data.board_index[r])))
        writer.writerow(row)
    return buf.getvalue()


def write_correspondence_csv(path, data: CorrespondenceSet) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(correspondence_csv_text(data))


def read_correspondence_csv(path) -> CorrespondenceSet:
    """Parse a correspondence CSV, reporting offending line numbers."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        with_board = header and header[-1] == "board"
        coord_cols = header[:-1] if with_board else header
        if len(coord_cols) < 5 or coord_cols[-3:] != ["x", "y", "z"] or (len(coord_cols) - 3) % 2 != 0:
            raise ValueError(f"{path}: malformed header {header!r}")
        camera_count = (len(coord_cols) - 3) // 2
        expected = correspondence_header(camera_count, with_board)
        if header != expected:
            raise ValueError(f"{path}: header {header!r} does not match expected {expected!r}")

        pixels, points, boards = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                values = [float(v) for v in row[: len(coord_cols)]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            pixels.append(values[:-3])
            points.append(values[-3:])
            if with_board:
                try:
                    boards.append(int(row[-1]))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-integer board index {row[-1]!r}") from None
    if not pixels:
        raise ValueError(f"{path}: no data rows")
    return CorrespondenceSet(
        np.array(pixels),
        np.array(points),
        camera_count,
        np.array(boards) if with_board else None,
    )
