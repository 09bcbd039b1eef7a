"""Rigid registration of reconstructed point clouds to the ground-truth frame.

Kabsch gives the closed-form least-squares rotation/translation for known
correspondences; point-to-point ICP alternates exhaustive nearest-neighbor
matching with Kabsch steps.  Clouds here are small (<= a few thousand points)
so matching is plain O(n^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError


@dataclass
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal (tolerance 1e-9)")
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper (det +1)")

    def apply(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


@dataclass
class AlignmentReport:
    transform: RigidTransform
    pre_rmse: float
    post_rmse: float
    iterations: int
    rmse_history: list = field(default_factory=list)


def _cloud(points, name) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != 3:
        raise ValueError(f"{name} must be (n, 3)")
    return points


def kabsch_align(source, target) -> RigidTransform:
    """Least-squares rigid transform mapping source points onto target points.

    Correspondence is by index.  SVD-based with reflection correction; raises
    DegenerateGeometryError for fewer than 3 points or (near-)collinear
    configurations, where the rotation is not unique.
    """
    source = _cloud(source, "source")
    target = _cloud(target, "target")
    if source.shape != target.shape:
        raise ValueError("source and target must have equal shapes")
    n = source.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"rigid alignment needs >= 3 points, got {n}")

    centroid_s = source.mean(axis=0)
    centroid_t = target.mean(axis=0)
    src = source - centroid_s
    tgt = target - centroid_t

    # collinear/coincident source points leave a rotation DOF unconstrained
    sv = np.linalg.svd(src, compute_uv=False)
    if sv[1] <= 1e-12 + 1e-9 * sv[0]:
        raise DegenerateGeometryError("source points are collinear or coincident")

    H = src.T @ tgt
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = centroid_t - R @ centroid_s
    return RigidTransform(R, t)


def _matched_rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))


def icp_align(source, target, max_iter: int = 100, tol: float = 1e-9) -> AlignmentReport:
    """Point-to-point ICP: iterate nearest-neighbor matching and Kabsch.

    Stops when the matched-pair RMSE improves by less than ``tol`` (mm) or at
    ``max_iter``.  The matched RMSE is monotone non-increasing: the Kabsch step
    is optimal for fixed matches and re-matching never increases any
    point-to-match distance.
    """
    source = _cloud(source, "source")
    target = _cloud(target, "target")
    if source.shape[0] == 0 or target.shape[0] == 0:
        raise ValueError("point clouds must be non-empty")

    current = source.copy()
    total = RigidTransform.identity()
    pre_rmse = None
    history = []
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d2 = np.sum((current[:, None, :] - target[None, :, :]) ** 2, axis=2)
        nn = np.argmin(d2, axis=1)
        matched = target[nn]
        before = _matched_rmse(current, matched)
        if pre_rmse is None:
            pre_rmse = before
        step = kabsch_align(current, matched)
        current = step.apply(current)
        total = step.compose(total)
        after = _matched_rmse(current, matched)
        history.append(after)
        if before - after < tol:
            break
    return AlignmentReport(
        transform=total,
        pre_rmse=float(pre_rmse),
        post_rmse=float(history[-1]),
        iterations=iterations,
        rmse_history=history,
    )
