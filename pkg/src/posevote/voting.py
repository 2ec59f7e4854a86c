"""Hough voting for object center localization and translation recovery.

Each labeled pixel casts votes along its predicted ray toward the center;
accumulator maxima surviving non-maximum suppression become detections. The
depth of a center is the mean of its inlier depth predictions, and the full
3D translation follows by inverting the pinhole projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import CenterField, LabelMap
from .geometry import CameraIntrinsics, backproject_center

_RAY_STEP = 0.5  # px; fine enough to touch every crossed cell


class VotingError(ValueError):
    pass


@dataclass
class VotingParams:
    score_threshold: int | None = None  # None -> max(10, 0.1 * class pixels)
    nms_radius: int = 20
    inlier_ray_distance: float = 3.0
    max_ray_length: int | None = None  # None -> image diagonal

    def resolved_threshold(self, class_pixel_count: int) -> int:
        if self.score_threshold is not None:
            return self.score_threshold
        return max(10, int(0.1 * class_pixel_count))


@dataclass
class VoteGrid:
    class_id: int
    scores: np.ndarray  # (height, width) non-negative integers

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


@dataclass
class Detection:
    class_id: int
    center: np.ndarray  # (x, y) px
    score: int
    inliers: np.ndarray  # (n, 2) integer (x, y), row-major order
    bbox: tuple  # (xmin, ymin, xmax, ymax)
    depth_tz: float
    translation: np.ndarray  # (3,) meters

    def to_dict(self) -> dict:
        return {
            "class_id": int(self.class_id),
            "center_px": [float(self.center[0]), float(self.center[1])],
            "score": int(self.score),
            "inlier_count": int(self.inliers.shape[0]),
            "bbox_px": [int(v) for v in self.bbox],
            "depth_tz_m": float(self.depth_tz),
            "translation_m": [float(v) for v in self.translation],
        }


def _class_rays(labels: LabelMap, fld: CenterField, class_id: int):
    """Pixels of a class with a nonzero predicted direction (xs, ys, nx, ny)."""
    if not fld.has_class(class_id):
        raise VotingError(f"field has no plane for class {class_id}")
    ys, xs = np.nonzero(labels.labels == class_id)
    pl = fld.plane(class_id)
    nx = pl[ys, xs, 0].astype(float)
    ny = pl[ys, xs, 1].astype(float)
    norm = np.hypot(nx, ny)
    keep = norm > 1e-6
    nx, ny, norm = nx[keep], ny[keep], norm[keep]
    return xs[keep], ys[keep], nx / norm, ny / norm


def cast_votes(labels: LabelMap, fld: CenterField, class_id: int,
               max_ray_length: int | None = None) -> VoteGrid:
    """Accumulate center votes for one class along every pixel's ray.

    Each pixel increments every grid cell its ray visits (all-touched
    stepping at half-pixel resolution), up to max ray length or the border.
    Accumulation is pure addition, so the result is independent of pixel
    processing order.
    """
    h, w = labels.height, labels.width
    grid = np.zeros((h, w), dtype=np.int64)
    xs, ys, nx, ny = _class_rays(labels, fld, class_id)
    if xs.size == 0:
        return VoteGrid(class_id=class_id, scores=grid)

    max_len = max_ray_length or int(math.ceil(math.hypot(w, h)))
    n_steps = int(max_len / _RAY_STEP) + 1
    ts = np.arange(n_steps) * _RAY_STEP
    # cells touched along each ray, rounded to nearest integer pixel
    cx = np.floor(xs[:, None] + nx[:, None] * ts[None, :] + 0.5).astype(np.int64)
    cy = np.floor(ys[:, None] + ny[:, None] * ts[None, :] + 0.5).astype(np.int64)
    inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
    key = cy * w + cx
    fresh = np.ones_like(inside)
    fresh[:, 1:] = key[:, 1:] != key[:, :-1]  # dedup consecutive duplicates
    valid = inside & fresh
    np.add.at(grid.ravel(), key[valid], 1)
    return VoteGrid(class_id=class_id, scores=grid)


def find_centers(grid: VoteGrid, params: VotingParams,
                 class_pixel_count: int = 0) -> list[tuple[np.ndarray, int]]:
    """Greedy NMS over accumulator cells above the score threshold.

    Returns [(center (x, y), score)] sorted by descending score, ties broken
    by lowest row-major index.
    """
    thr = params.resolved_threshold(class_pixel_count)
    ys, xs = np.nonzero(grid.scores > thr)
    if ys.size == 0:
        return []
    scores = grid.scores[ys, xs]
    order = np.lexsort((ys * grid.width + xs, -scores))
    accepted: list[tuple[np.ndarray, int]] = []
    acc_xy: list[tuple[int, int]] = []
    r = params.nms_radius
    for idx in order:
        x, y, s = int(xs[idx]), int(ys[idx]), int(scores[idx])
        if any(max(abs(x - ax), abs(y - ay)) <= r for ax, ay in acc_xy):
            continue
        acc_xy.append((x, y))
        accepted.append((np.array([float(x), float(y)]), s))
    return accepted


def collect_inliers(center, labels: LabelMap, fld: CenterField, class_id: int,
                    eps: float = 3.0) -> np.ndarray:
    """Class pixels whose ray passes within eps px of the center while
    pointing toward it (positive dot product). Returns (n, 2) integer (x, y)
    pairs in row-major pixel order.
    """
    xs, ys, nx, ny = _class_rays(labels, fld, class_id)
    if xs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    vx = float(center[0]) - xs
    vy = float(center[1]) - ys
    toward = vx * nx + vy * ny > 0
    perp = np.abs(vx * ny - vy * nx)
    keep = toward & (perp <= eps)
    out = np.stack([xs[keep], ys[keep]], axis=1).astype(np.int64)
    order = np.lexsort((out[:, 0], out[:, 1]))
    return out[order]


def refine_center(center, inliers: np.ndarray, fld: CenterField,
                  class_id: int) -> np.ndarray:
    """Sub-pixel center: least-squares point closest to all inlier rays.

    Solves sum_i (I - n_i n_i^T) c = sum_i (I - n_i n_i^T) p_i; falls back to
    the voted cell when the system is degenerate (e.g. all rays parallel).
    """
    if inliers.shape[0] < 2:
        return np.asarray(center, dtype=float)
    pl = fld.plane(class_id)
    xs = inliers[:, 0]
    ys = inliers[:, 1]
    nx = pl[ys, xs, 0].astype(float)
    ny = pl[ys, xs, 1].astype(float)
    norm = np.hypot(nx, ny)
    nx, ny = nx / norm, ny / norm
    a00 = np.sum(1.0 - nx * nx)
    a01 = np.sum(-nx * ny)
    a11 = np.sum(1.0 - ny * ny)
    b0 = np.sum((1.0 - nx * nx) * xs - nx * ny * ys)
    b1 = np.sum(-nx * ny * xs + (1.0 - ny * ny) * ys)
    det = a00 * a11 - a01 * a01
    if abs(det) < 1e-9 * max(1.0, a00 + a11):
        return np.asarray(center, dtype=float)
    cx = (a11 * b0 - a01 * b1) / det
    cy = (a00 * b1 - a01 * b0) / det
    refined = np.array([cx, cy])
    # guard against outlier-driven drift away from the voted peak
    if np.max(np.abs(refined - np.asarray(center, dtype=float))) > 2.0:
        return np.asarray(center, dtype=float)
    return refined


def estimate_translation(center, inliers: np.ndarray, fld: CenterField,
                         class_id: int, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Translation from the voted center and the mean inlier depth."""
    if inliers.shape[0] == 0:
        raise VotingError("no inlier support for translation estimate")
    pl = fld.plane(class_id)
    tz = float(np.mean(pl[inliers[:, 1], inliers[:, 0], 2].astype(float)))
    if tz <= 0:
        raise VotingError("mean predicted depth is not positive")
    return backproject_center(np.asarray(center, dtype=float), tz, intrinsics)


def detect(labels: LabelMap, fld: CenterField, intrinsics: CameraIntrinsics,
           params: VotingParams | None = None) -> list[Detection]:
    """Full voting pipeline: votes -> centers -> inliers -> translation/bbox."""
    params = params or VotingParams()
    detections: list[Detection] = []
    for cid in labels.class_ids():
        if not fld.has_class(cid):
            continue
        grid = cast_votes(labels, fld, cid, max_ray_length=params.max_ray_length)
        n_px = int(np.count_nonzero(labels.labels == cid))
        for center, score in find_centers(grid, params, class_pixel_count=n_px):
            inliers = collect_inliers(center, labels, fld, cid,
                                      eps=params.inlier_ray_distance)
            if inliers.shape[0] == 0:
                continue
            center = refine_center(center, inliers, fld, cid)
            translation = estimate_translation(center, inliers, fld, cid, intrinsics)
            bbox = (int(inliers[:, 0].min()), int(inliers[:, 1].min()),
                    int(inliers[:, 0].max()), int(inliers[:, 1].max()))
            detections.append(Detection(
                class_id=cid, center=center, score=score, inliers=inliers,
                bbox=bbox, depth_tz=float(translation[2]), translation=translation))
    return detections
