"""Pose evaluation: ADD, ADD-S, reprojection error, accuracy curves, AUC.

ADD is the mean distance between corresponding model points under the two
poses; ADD-S replaces correspondence with the closest point, so symmetric
shapes are not penalized for symmetry-equivalent rotations. A pose is correct
when its distance is below a fraction (default 10%) of the model diameter.
AUC integrates the accuracy-threshold curve up to a maximum threshold
(10 cm by default) and is reported as a percentage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .geometry import CameraIntrinsics, GeometryError, ObjectModel, Pose, project_many

_BRUTE_FORCE_LIMIT = 2000


def add(pose_est: Pose, pose_gt: Pose, model: ObjectModel) -> float:
    """Mean distance between corresponding transformed model points."""
    if model.num_points == 0:
        raise ValueError("empty model")
    d = pose_est.transform(model.points) - pose_gt.transform(model.points)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def add_s(pose_est: Pose, pose_gt: Pose, model: ObjectModel) -> float:
    """Mean closest-point distance between the transformed model points."""
    if model.num_points == 0:
        raise ValueError("empty model")
    est = pose_est.transform(model.points)
    gt = pose_gt.transform(model.points)
    if gt.shape[0] <= _BRUTE_FORCE_LIMIT:
        dmin = np.min(cdist(est, gt), axis=1)
    else:
        dmin, _ = cKDTree(gt).query(est, k=1)
    return float(np.mean(dmin))


def reprojection_error(pose_est: Pose, pose_gt: Pose, model: ObjectModel,
                       intrinsics: CameraIntrinsics) -> float:
    """Mean pixel distance between corresponding projected model points."""
    if model.num_points == 0:
        raise ValueError("empty model")
    est = pose_est.transform(model.points)
    gt = pose_gt.transform(model.points)
    if np.any(est[:, 2] <= 0) or np.any(gt[:, 2] <= 0):
        raise GeometryError("transformed points behind the camera")
    d = project_many(est, intrinsics) - project_many(gt, intrinsics)
    return float(np.mean(np.linalg.norm(d, axis=1)))


def is_correct(distance: float, model: ObjectModel, fraction: float = 0.1) -> bool:
    """Strictly below fraction * model diameter."""
    if fraction <= 0:
        raise ValueError("fraction must be positive")
    return distance < fraction * model.diameter


@dataclass
class AccuracyCurve:
    thresholds: np.ndarray  # ascending, meters (or px)
    accuracy: np.ndarray  # same length, in [0, 1], non-decreasing
    accuracy_at_zero: float = 0.0  # right-limit at threshold 0

    @property
    def max_threshold(self) -> float:
        return float(self.thresholds[-1])


def accuracy_curve(distances, max_threshold: float, n_steps: int = 1000) -> AccuracyCurve:
    """Fraction of distances strictly below each of n_steps uniform thresholds
    in (0, max_threshold].
    """
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("accuracy curve needs at least one distance")
    if max_threshold <= 0:
        raise ValueError("max_threshold must be positive")
    thresholds = np.linspace(max_threshold / n_steps, max_threshold, n_steps)
    accuracy = np.mean(d[None, :] < thresholds[:, None], axis=1)
    return AccuracyCurve(thresholds=thresholds, accuracy=accuracy,
                         accuracy_at_zero=float(np.mean(d <= 0.0)))


def auc(curve: AccuracyCurve) -> float:
    """Trapezoidal area under the accuracy curve over [0, max_threshold],
    normalized by max_threshold, as a percentage in [0, 100].

    The explicit threshold-zero point uses the right-limit accuracy, so a
    perfect estimator (all distances zero) scores exactly 100.
    """
    ts = np.concatenate([[0.0], curve.thresholds])
    acc = np.concatenate([[curve.accuracy_at_zero], curve.accuracy])
    return float(100.0 * np.trapezoid(acc, ts) / curve.max_threshold)
