"""Synthetic multi-camera rig.

Parametric pinhole cameras with Brown-Conrady or equidistant (Kannala-Brandt)
distortion project known 3D points to pixels.  The module generates the
moving-ball grid and translated-checkerboard datasets, answers oracle queries
for active learning, and provides a known-parameter multi-view triangulation
baseline.

Conventions: world units are millimetres; ``rotation``/``translation`` map
world to camera coordinates (``x_cam = R @ x_world + t``); pixel ``u`` grows
with camera x, ``v`` with camera y; points project only if ``z_cam > 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .calibration import CorrespondenceSet
from .errors import DegenerateGeometryError, UndistortionError, VisibilityError

DISTORTION_NONE = "none"
BROWN_CONRADY = "brown_conrady"
EQUIDISTANT = "equidistant"

_COEFF_COUNTS = {DISTORTION_NONE: 0, BROWN_CONRADY: 5, EQUIDISTANT: 4}


class ProjectionStatus(IntEnum):
    VISIBLE = 0
    BEHIND_CAMERA = 1
    OUT_OF_FRAME = 2


@dataclass(frozen=True)
class Distortion:
    """Lens distortion acting on normalized image coordinates.

    ``brown_conrady`` uses coefficients (k1, k2, p1, p2, k3): radial terms in
    even powers of r plus tangential p1/p2.  ``equidistant`` uses
    (k1, k2, k3, k4) in the Kannala-Brandt angle polynomial
    theta_d = theta (1 + k1 th^2 + k2 th^4 + k3 th^6 + k4 th^8).
    """

    model: str = DISTORTION_NONE
    coeffs: tuple = ()

    def __post_init__(self):
        if self.model not in _COEFF_COUNTS:
            raise ValueError(f"unknown distortion model {self.model!r}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) != _COEFF_COUNTS[self.model]:
            raise ValueError(
                f"{self.model} needs {_COEFF_COUNTS[self.model]} coefficients, got {len(self.coeffs)}"
            )

    def distort(self, xy: np.ndarray) -> np.ndarray:
        """Apply the distortion map to normalized coordinates (m, 2)."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self.model == DISTORTION_NONE:
            return xy.copy()
        x, y = xy[:, 0], xy[:, 1]
        if self.model == BROWN_CONRADY:
            k1, k2, p1, p2, k3 = self.coeffs
            r2 = x * x + y * y
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
            yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
            return np.column_stack([xd, yd])
        k1, k2, k3, k4 = self.coeffs
        r = np.sqrt(x * x + y * y)
        theta = np.arctan(r)
        t2 = theta * theta
        theta_d = theta * (1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4))))
        scale = np.where(r > 0, theta_d / np.where(r > 0, r, 1.0), 1.0)
        return xy * scale[:, None]

    def undistort(self, xy: np.ndarray, max_iter: int = 50, tol: float = 1e-12) -> np.ndarray:
        """Invert the distortion map by Newton iteration in normalized coords."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        if self.model == DISTORTION_NONE:
            return xy.copy()
        if self.model == EQUIDISTANT:
            return self._undistort_equidistant(xy, max_iter, tol)
        return self._undistort_brown_conrady(xy, max_iter, tol)

    def _undistort_brown_conrady(self, target, max_iter, tol):
        k1, k2, p1, p2, k3 = self.coeffs
        cur = target.copy()
        for _ in range(max_iter):
            x, y = cur[:, 0], cur[:, 1]
            r2 = x * x + y * y
            radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
            g = k1 + r2 * (2.0 * k2 + r2 * 3.0 * k3)  # d radial / d r2 terms
            fx = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x) - target[:, 0]
            fy = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y - target[:, 1]
            j00 = radial + 2.0 * x * x * g + 2.0 * p1 * y + 6.0 * p2 * x
            j01 = 2.0 * x * y * g + 2.0 * p1 * x + 2.0 * p2 * y
            j10 = 2.0 * x * y * g + 2.0 * p1 * x + 2.0 * p2 * y
            j11 = radial + 2.0 * y * y * g + 6.0 * p1 * y + 2.0 * p2 * x
            det = j00 * j11 - j01 * j10
            if np.any(np.abs(det) < 1e-15):
                raise UndistortionError("singular Jacobian during Brown-Conrady undistortion")
            dx = (j11 * fx - j01 * fy) / det
            dy = (-j10 * fx + j00 * fy) / det
            cur = cur - np.column_stack([dx, dy])
            if float(np.max(np.abs(np.column_stack([fx, fy])))) < tol:
                return cur
        residual = np.max(np.abs(self.distort(cur) - target))
        if residual < tol * 10:
            return cur
        raise UndistortionError(
            f"Brown-Conrady undistortion did not converge in {max_iter} iterations "
            f"(residual {residual:.3e})"
        )

    def _undistort_equidistant(self, target, max_iter, tol):
        # distortion is purely radial: solve theta from theta_d, keep direction
        k1, k2, k3, k4 = self.coeffs
        rd = np.linalg.norm(target, axis=1)
        theta = rd.copy()  # theta_d ~= theta for small angles
        converged = rd <= 0
        for _ in range(max_iter):
            t2 = theta * theta
            poly = 1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)))
            f = theta * poly - rd
            dpoly = 2.0 * theta * (k1 + t2 * (2.0 * k2 + t2 * (3.0 * k3 + t2 * 4.0 * k4)))
            df = poly + theta * dpoly
            if np.any(np.abs(df) < 1e-15):
                raise UndistortionError("singular derivative during equidistant undistortion")
            step = f / df
            theta = theta - np.where(converged, 0.0, step)
            converged = converged | (np.abs(f) < tol)
            if np.all(converged):
                break
        else:
            raise UndistortionError(f"equidistant undistortion did not converge in {max_iter} iterations")
        r = np.tan(theta)
        scale = np.where(rd > 0, r / np.where(rd > 0, rd, 1.0), 1.0)
        return target * scale[:, None]

    def to_dict(self) -> dict:
        return {"model": self.model, "coeffs": list(self.coeffs)}

    @staticmethod
    def from_dict(d: dict) -> "Distortion":
        return Distortion(d.get("model", DISTORTION_NONE), tuple(d.get("coeffs", ())))


def _check_rotation(R: np.ndarray) -> None:
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
        raise ValueError("rotation matrix is not orthonormal (tolerance 1e-9)")
    if abs(np.linalg.det(R) - 1.0) > 1e-9:
        raise ValueError("rotation matrix must have determinant +1")


@dataclass
class CameraModel:
    """One synthetic camera: intrinsics, distortion and world-to-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: Distortion = field(default_factory=Distortion)
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        _check_rotation(self.rotation)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return points @ self.rotation.T + self.translation

    def camera_center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def project_points(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Project world points; returns pixel array (m, 2) and status codes.

        Pixels are NaN for points behind the camera; out-of-frame points keep
        their (finite) coordinates so callers can inspect how far out they fall.
        """
        pc = self.world_to_camera(points)
        m = pc.shape[0]
        uv = np.full((m, 2), np.nan)
        status = np.full(m, ProjectionStatus.BEHIND_CAMERA, dtype=int)
        front = pc[:, 2] > 0
        if np.any(front):
            norm = pc[front, :2] / pc[front, 2:3]
            dist = self.distortion.distort(norm)
            uv[front, 0] = self.fx * dist[:, 0] + self.cx
            uv[front, 1] = self.fy * dist[:, 1] + self.cy
            inside = (
                (uv[front, 0] >= 0)
                & (uv[front, 0] <= self.width - 1)
                & (uv[front, 1] >= 0)
                & (uv[front, 1] <= self.height - 1)
            )
            idx = np.flatnonzero(front)
            status[idx[inside]] = ProjectionStatus.VISIBLE
            status[idx[~inside]] = ProjectionStatus.OUT_OF_FRAME
        return uv, status

    def pixel_to_ray(self, uv) -> tuple[np.ndarray, np.ndarray]:
        """Back-project pixels to world-frame unit ray directions.

        Returns (camera center (3,), directions (m, 3)).
        """
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        norm_d = np.column_stack([(uv[:, 0] - self.cx) / self.fx, (uv[:, 1] - self.cy) / self.fy])
        norm = self.distortion.undistort(norm_d)
        dirs_cam = np.column_stack([norm, np.ones(norm.shape[0])])
        dirs_world = dirs_cam @ self.rotation  # R^T applied row-wise
        dirs_world /= np.linalg.norm(dirs_world, axis=1, keepdims=True)
        return self.camera_center(), dirs_world

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "distortion": self.distortion.to_dict(),
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @staticmethod
    def from_dict(d: dict) -> "CameraModel":
        return CameraModel(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            distortion=Distortion.from_dict(d.get("distortion", {})),
            rotation=np.array(d["rotation"], dtype=float).reshape(3, 3),
            translation=np.array(d["translation"], dtype=float),
        )


def project_point(cam: CameraModel, point) -> tuple[np.ndarray | None, ProjectionStatus]:
    """Project a single world point; pixel is None when behind the camera."""
    uv, status = cam.project_points(np.asarray(point, dtype=float)[None, :])
    st = ProjectionStatus(int(status[0]))
    if st == ProjectionStatus.BEHIND_CAMERA:
        return None, st
    return uv[0], st


@dataclass
class RigConfig:
    """A fixed set of cameras plus the pixel-noise model and its seed."""

    cameras: list
    pixel_noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.cameras:
            raise ValueError("rig needs at least one camera")
        if self.pixel_noise_std < 0:
            raise ValueError("pixel noise std must be non-negative")

    @property
    def camera_count(self) -> int:
        return len(self.cameras)

    def subset(self, camera_count: int) -> "RigConfig":
        if not 1 <= camera_count <= len(self.cameras):
            raise ValueError(f"camera_count must be in [1, {len(self.cameras)}]")
        return RigConfig(self.cameras[:camera_count], self.pixel_noise_std, self.seed)

    def to_dict(self) -> dict:
        return {
            "cameras": [c.to_dict() for c in self.cameras],
            "pixel_noise_std": self.pixel_noise_std,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "RigConfig":
        return RigConfig(
            cameras=[CameraModel.from_dict(c) for c in d["cameras"]],
            pixel_noise_std=float(d.get("pixel_noise_std", 0.0)),
            seed=int(d.get("seed", 0)),
        )

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load_json(path) -> "RigConfig":
        with open(path) as fh:
            return RigConfig.from_dict(json.load(fh))


@dataclass
class GridSpec:
    """Regular 3D grid of ball positions (counts nx, ny, nz; spacing in mm)."""

    counts: tuple = (5, 5, 7)
    origin: tuple = (-200.0, -200.0, 600.0)
    spacing: tuple = (100.0, 100.0, 100.0)

    def __post_init__(self):
        if any(int(c) < 1 for c in self.counts):
            raise ValueError("grid counts must all be >= 1")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("grid spacings must be positive")

    def points(self) -> np.ndarray:
        """Grid nodes in raster order: x index slowest, z index fastest."""
        nx, ny, nz = (int(c) for c in self.counts)
        ox, oy, oz = self.origin
        dx, dy, dz = self.spacing
        ix, iy, iz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        pts = np.column_stack(
            [ox + ix.ravel() * dx, oy + iy.ravel() * dy, oz + iz.ravel() * dz]
        )
        return pts.astype(float)


@dataclass
class CheckerboardSpec:
    """Checkerboard corner lattice translated along the board normal.

    World coordinates are (col * square_size, row * square_size,
    position * step) with z = 0 the position nearest the cameras.
    """

    rows: int = 8
    cols: int = 11
    square_size: float = 13.29
    positions: int = 20
    step: float = 10.0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("checkerboard needs at least 2x2 corners")
        if self.square_size <= 0 or self.step <= 0:
            raise ValueError("square_size and step must be positive")
        if self.positions < 1:
            raise ValueError("positions must be >= 1")

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Corner coordinates (n, 3) plus per-row board position index."""
        board, row, col = np.meshgrid(
            np.arange(self.positions), np.arange(self.rows), np.arange(self.cols), indexing="ij"
        )
        pts = np.column_stack(
            [
                col.ravel() * self.square_size,
                row.ravel() * self.square_size,
                board.ravel() * self.step,
            ]
        ).astype(float)
        return pts, board.ravel().astype(int)


def _project_all(rig: RigConfig, points: np.ndarray) -> np.ndarray:
    """Noiseless pixel matrix (n, 2i); raises VisibilityError if any point is
    not VISIBLE in every camera."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    pixels = np.empty((n, 2 * rig.camera_count))
    violations = []
    for c, cam in enumerate(rig.cameras):
        uv, status = cam.project_points(points)
        pixels[:, 2 * c : 2 * c + 2] = uv
        for i in np.flatnonzero(status != ProjectionStatus.VISIBLE):
            violations.append((int(i), c, ProjectionStatus(int(status[i])).name))
    if violations:
        shown = ", ".join(
            f"point {i} {name.lower()} in camera {c}" for i, c, name in violations[:5]
        )
        more = "" if len(violations) <= 5 else f" (+{len(violations) - 5} more)"
        raise VisibilityError(f"{len(violations)} visibility violation(s): {shown}{more}", violations)
    return pixels


def generate_grid_dataset(rig: RigConfig, grid: GridSpec | None = None) -> CorrespondenceSet:
    """Project every grid node through every camera and add seeded pixel noise."""
    grid = grid or GridSpec()
    points = grid.points()
    pixels = _project_all(rig, points)
    if rig.pixel_noise_std > 0:
        rng = np.random.default_rng(rig.seed)
        pixels = pixels + rig.pixel_noise_std * rng.standard_normal(pixels.shape)
    return CorrespondenceSet(pixels, points, rig.camera_count)


def generate_checkerboard_dataset(
    rig: RigConfig, board: CheckerboardSpec | None = None
) -> CorrespondenceSet:
    """Project all corner positions, tagging rows with their board index."""
    board = board or CheckerboardSpec()
    points, index = board.points()
    pixels = _project_all(rig, points)
    if rig.pixel_noise_std > 0:
        rng = np.random.default_rng(rig.seed)
        pixels = pixels + rig.pixel_noise_std * rng.standard_normal(pixels.shape)
    return CorrespondenceSet(pixels, points, rig.camera_count, index)


def query_oracle(rig: RigConfig, target, pool=None) -> tuple[np.ndarray, np.ndarray]:
    """Answer one oracle query; returns (pixel row (2i,), world point (3,)).

    A 3-vector target is treated as a world point: its (noisy) projections are
    returned.  A 2i-vector target is a pixel observation drawn from ``pool``
    (anything with ``pixels`` and ``points`` arrays); its stored ground truth
    is returned.
    """
    target = np.asarray(target, dtype=float).ravel()
    if target.shape == (3,):  # world point (pixel observations always have even length)
        pixels = _project_all(rig, target[None, :])[0]
        if rig.pixel_noise_std > 0:
            rng = np.random.default_rng(rig.seed)
            pixels = pixels + rig.pixel_noise_std * rng.standard_normal(pixels.shape)
        return pixels, target.copy()
    if target.shape != (2 * rig.camera_count,):
        raise ValueError(
            f"target must be a world point (3,) or pixel observation ({2 * rig.camera_count},)"
        )
    if pool is None:
        raise ValueError("pixel-observation queries need a candidate pool")
    matches = np.flatnonzero(np.all(pool.pixels == target, axis=1))
    if matches.size == 0:
        raise ValueError("candidate not in pool")
    idx = int(matches[0])
    return pool.pixels[idx].copy(), pool.points[idx].copy()


def triangulate_baseline(rig: RigConfig, obs) -> np.ndarray:
    """Recover a 3D point from its pixel observations via ray least squares.

    Each pixel is undistorted (Newton) and back-projected to a world ray; the
    returned point minimizes the sum of squared perpendicular distances to all
    rays.  Raises DegenerateGeometryError when the rays are (near-)parallel.
    """
    if rig.camera_count < 2:
        raise ValueError("triangulation needs at least 2 cameras")
    obs = np.asarray(obs, dtype=float).ravel()
    if obs.shape != (2 * rig.camera_count,):
        raise ValueError(f"observation length {obs.shape[0]} != {2 * rig.camera_count}")
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for c, cam in enumerate(rig.cameras):
        center, dirs = cam.pixel_to_ray(obs[2 * c : 2 * c + 2])
        d = dirs[0]
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ center
    if np.linalg.cond(A) > 1e12:
        raise DegenerateGeometryError("triangulation rays are near-parallel")
    return np.linalg.solve(A, b)


def _look_at_rotation(position: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-camera rotation for a camera at ``position`` looking at ``target``."""
    forward = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    forward = forward / np.linalg.norm(forward)
    up = np.asarray(up, dtype=float)
    right = np.cross(up, forward)
    right = right / np.linalg.norm(right)
    cam_y = np.cross(forward, right)
    return np.vstack([right, cam_y, forward])


_REGULAR_DISTORTION = Distortion(BROWN_CONRADY, (-0.12, 0.03, 5e-4, -4e-4, 0.001))
_WIDE_DISTORTION = Distortion(EQUIDISTANT, (-0.02, 0.004, -8e-4, 1e-4))

# Bar layout: two regular cameras in the middle, wide-angle cameras outward,
# 120 mm apart, so camera subsets [:2], [:4], [:6] mirror the
# regular / regular+wide / all-cameras setups.
_BAR_OFFSETS = (-60.0, 60.0, -300.0, -180.0, 180.0, 300.0)


def _bar_rig(
    center: np.ndarray,
    target: np.ndarray,
    num_cameras: int,
    pixel_noise_std: float,
    seed: int,
) -> RigConfig:
    if not 1 <= num_cameras <= 6:
        raise ValueError("default bar rig supports 1..6 cameras")
    cameras = []
    for i in range(num_cameras):
        position = center + np.array([_BAR_OFFSETS[i], 0.0, 0.0])
        R = _look_at_rotation(position, target)
        t = -R @ position
        regular = i < 2
        cameras.append(
            CameraModel(
                fx=560.0 if regular else 330.0,
                fy=560.0 if regular else 330.0,
                cx=399.5,
                cy=639.5,
                width=800,
                height=1280,
                distortion=_REGULAR_DISTORTION if regular else _WIDE_DISTORTION,
                rotation=R,
                translation=t,
            )
        )
    return RigConfig(cameras, pixel_noise_std, seed)


def default_grid_rig(num_cameras: int = 6, pixel_noise_std: float = 0.3, seed: int = 0) -> RigConfig:
    """Camera bar at the world origin viewing the default grid volume."""
    return _bar_rig(
        center=np.zeros(3),
        target=np.array([0.0, 0.0, 900.0]),
        num_cameras=num_cameras,
        pixel_noise_std=pixel_noise_std,
        seed=seed,
    )


def default_checkerboard_rig(
    num_cameras: int = 6, pixel_noise_std: float = 0.15, seed: int = 0
) -> RigConfig:
    """Camera bar placed in front of the translated-checkerboard volume.

    The board frame has z = 0 nearest the cameras, so the bar sits at negative
    z looking toward increasing z.  Default noise is lower than the grid rig's
    because corner detection localizes better than blob detection; the short
    250 mm standoff gives the strong perspective the experiment relies on.
    """
    spec = CheckerboardSpec()
    bx = spec.square_size * (spec.cols - 1) / 2
    by = spec.square_size * (spec.rows - 1) / 2
    bz = spec.step * (spec.positions - 1) / 2
    return _bar_rig(
        center=np.array([bx, by, -250.0]),
        target=np.array([bx, by, bz]),
        num_cameras=num_cameras,
        pixel_noise_std=pixel_noise_std,
        seed=seed,
    )
