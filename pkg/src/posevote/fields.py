"""Dense per-pixel prediction containers and center-direction regression targets.

Pixel coordinates are integer (x, y) used directly; a pixel of class k with
center c regresses to the unit direction (c - p) / ||c - p|| plus the object
depth Tz. The degenerate center pixel stores direction (0, 0) but keeps Tz.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FieldError(ValueError):
    pass


@dataclass
class LabelMap:
    """Per-pixel class ids, 0 = background; shape (height, width)."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise FieldError("labels must be 2-D")
        self.labels = self.labels.astype(np.uint16, copy=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def class_ids(self) -> list[int]:
        ids = np.unique(self.labels)
        return [int(c) for c in ids if c != 0]


@dataclass
class DepthMap:
    """Per-pixel depth in meters, 0 = missing; shape (height, width)."""

    depth: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32)
        if self.depth.ndim != 2:
            raise FieldError("depth must be 2-D")
        if np.any(self.depth < 0):
            raise FieldError("depths must be non-negative")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass
class CenterField:
    """Per-class (nx, ny, Tz) planes, each of shape (height, width, 3).

    Stored sparsely as a dict keyed by class id; absent classes are implicit
    zero planes.
    """

    width: int
    height: int
    planes: dict[int, np.ndarray] = field(default_factory=dict)

    def plane(self, class_id: int) -> np.ndarray:
        if class_id not in self.planes:
            self.planes[class_id] = np.zeros((self.height, self.width, 3),
                                             dtype=np.float32)
        return self.planes[class_id]

    def has_class(self, class_id: int) -> bool:
        return class_id in self.planes

    def class_ids(self) -> list[int]:
        return sorted(self.planes)

    def copy(self) -> "CenterField":
        return CenterField(self.width, self.height,
                           {k: v.copy() for k, v in self.planes.items()})

    def to_tensor(self, n_classes: int | None = None) -> np.ndarray:
        """Pack as a dense (n_classes, 3, height, width) f32 tensor.

        Plane index = class_id - 1.
        """
        n = n_classes or (max(self.planes) if self.planes else 1)
        out = np.zeros((n, 3, self.height, self.width), dtype=np.float32)
        for cid, pl in self.planes.items():
            out[cid - 1] = np.moveaxis(pl, 2, 0)
        return out

    @classmethod
    def from_tensor(cls, tensor: np.ndarray) -> "CenterField":
        if tensor.ndim != 4 or tensor.shape[1] != 3:
            raise FieldError("field tensor must have shape (classes, 3, h, w)")
        n, _, h, w = tensor.shape
        planes = {}
        for k in range(n):
            pl = np.moveaxis(tensor[k], 0, 2).astype(np.float32)
            if np.any(pl):
                planes[k + 1] = np.ascontiguousarray(pl)
        return cls(width=w, height=h, planes=planes)


def directions_to_center(xs, ys, center) -> np.ndarray:
    """Unit directions from integer pixels (xs, ys) toward a center, (n, 2).

    Pixels exactly at the center get (0, 0).
    """
    dx = center[0] - np.asarray(xs, dtype=float)
    dy = center[1] - np.asarray(ys, dtype=float)
    norm = np.hypot(dx, dy)
    safe = np.where(norm > 0, norm, 1.0)
    out = np.stack([dx / safe, dy / safe], axis=-1)
    out[norm == 0] = 0.0
    return out


def regression_targets(labels: LabelMap, centers: dict, depths: dict) -> CenterField:
    """Build the per-class (nx, ny, Tz) target field from labels and centers.

    `centers` maps class id -> 2D pixel center (may lie outside the image);
    `depths` maps class id -> Tz in meters.
    """
    out = CenterField(width=labels.width, height=labels.height)
    for cid in labels.class_ids():
        if cid not in centers:
            raise FieldError(f"class {cid} is labeled but has no center")
        if cid not in depths or depths[cid] <= 0:
            raise FieldError(f"class {cid} needs a positive depth")
        ys, xs = np.nonzero(labels.labels == cid)
        dirs = directions_to_center(xs, ys, np.asarray(centers[cid], dtype=float))
        pl = out.plane(cid)
        pl[ys, xs, 0] = dirs[:, 0]
        pl[ys, xs, 1] = dirs[:, 1]
        pl[ys, xs, 2] = depths[cid]
    return out
