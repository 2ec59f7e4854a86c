"""Synthetic scene generation: z-buffered depth/label rendering, ground-truth
center fields, primitive models, and controlled noise injection.

The renderer stands in for a learned dense predictor and doubles as the
ground-truth oracle for tests. Meshes are rasterized triangle by triangle
with perspective-correct depth; point-only models are splatted with a
depth-scaled radius. Everything is deterministic, and all randomness flows
from explicit seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from .fields import CenterField, DepthMap, LabelMap, directions_to_center
from .geometry import (CameraIntrinsics, ObjectModel, Pose, project,
                       quat_from_axis_angle, quat_multiply, random_quat)


class SynthError(ValueError):
    pass


@dataclass
class Scene:
    instances: list  # [(class_id, Pose)]
    intrinsics: CameraIntrinsics
    width: int
    height: int


@dataclass
class NoiseSpec:
    direction_sigma: float = 0.0  # radians of angular jitter on (nx, ny)
    depth_sigma: float = 0.0  # meters on Tz planes
    label_flip_rate: float = 0.0
    rotation_sigma_deg: float = 0.0  # simulated rotation-regression error
    rng_seed: int = 0

    def __post_init__(self):
        if self.direction_sigma < 0 or self.depth_sigma < 0:
            raise SynthError("noise sigmas must be non-negative")
        if not 0 <= self.label_flip_rate < 1:
            raise SynthError("label_flip_rate must be in [0, 1)")
        if self.rotation_sigma_deg < 0:
            raise SynthError("rotation_sigma_deg must be non-negative")

    @property
    def is_zero(self) -> bool:
        return (self.direction_sigma == 0 and self.depth_sigma == 0
                and self.label_flip_rate == 0 and self.rotation_sigma_deg == 0)


@dataclass
class RangeImage:
    """Rendered depth plus per-pixel camera-frame points and unit normals."""

    depth: np.ndarray  # (h, w), 0 = empty
    points: np.ndarray  # (h, w, 3)
    normals: np.ndarray  # (h, w, 3)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass
class InstanceTruth:
    """Ground truth bookkeeping for one scene instance."""

    index: int
    class_id: int
    pose: Pose
    center: np.ndarray  # projected (x, y), may lie outside the image
    tz: float
    visible_pixels: int
    solo_pixels: int
    center_occluded: bool

    @property
    def visibility(self) -> float:
        return self.visible_pixels / self.solo_pixels if self.solo_pixels else 0.0

    @property
    def fully_occluded(self) -> bool:
        return self.visible_pixels == 0


# ---------------------------------------------------------------------------
# primitive models

_PRIMITIVE_KINDS = ("cube", "bar_2fold", "asymmetric_blob", "cylinder")


def _box_mesh(sx: float, sy: float, sz: float, k: int):
    """Grid-sampled axis-aligned box surface; symmetric sampling, so the
    vertex set inherits the full symmetry of the box dimensions.

    Faces are the 12 corner triangles (the surface is flat, so a decimated
    mesh renders identically to the dense grid and much faster); the dense
    grid points remain for losses and metrics.
    """
    u = np.linspace(-0.5, 0.5, k)
    g0, g1 = np.meshgrid(u, u, indexing="ij")
    verts = []
    half = np.array([sx, sy, sz]) / 2.0
    for axis in range(3):
        for sign in (-1.0, 1.0):
            face_pts = np.zeros((k * k, 3))
            other = [a for a in range(3) if a != axis]
            face_pts[:, other[0]] = g0.ravel()
            face_pts[:, other[1]] = g1.ravel()
            face_pts[:, axis] = 0.5 * sign
            verts.append(face_pts * 2.0 * half)
    pts = np.concatenate(verts)
    # locate the 8 corners in the grid and triangulate the box over them
    corner_idx = {}
    for ix, cs in enumerate(
            (sign * half for sign in
             (np.array([sx_, sy_, sz_]) for sx_ in (-1, 1)
              for sy_ in (-1, 1) for sz_ in (-1, 1)))):
        j = int(np.argmin(np.sum((pts - cs) ** 2, axis=1)))
        corner_idx[ix] = j
    # corner bit order: x sign (4), y sign (2), z sign (1)
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        ia, ib, ic, id_ = (corner_idx[v] for v in (a, b, c, d))
        faces.append([ia, ib, ic])
        faces.append([ia, ic, id_])
    return pts, np.array(faces, dtype=np.int64)


def _cylinder_mesh(radius: float, length: float, n_ang: int, n_len: int):
    angles = np.arange(n_ang) * (2 * math.pi / n_ang)
    zs = np.linspace(-length / 2, length / 2, n_len)
    verts = []
    faces = []
    for iz, z in enumerate(zs):
        for a in angles:
            verts.append([radius * math.cos(a), radius * math.sin(a), z])
    # decimated faces: the side is straight along z, so quads span the full
    # length directly between the end rings; caps are fans over the same
    # strided angular subset (renders are self-consistent with the model)
    stride = max(1, n_ang // 16)
    ring_a = list(range(0, n_ang, stride))
    for j, ia in enumerate(ring_a):
        ib = ring_a[(j + 1) % len(ring_a)]
        a, b = ia, ib
        c, d = a + (n_len - 1) * n_ang, b + (n_len - 1) * n_ang
        faces.append([a, b, d])
        faces.append([a, d, c])
    for z, flip in ((-length / 2, True), (length / 2, False)):
        center_idx = len(verts)
        verts.append([0.0, 0.0, z])
        base = 0 if flip else (n_len - 1) * n_ang
        for j, ia in enumerate(ring_a):
            a = base + ia
            b = base + ring_a[(j + 1) % len(ring_a)]
            faces.append([center_idx, b, a] if flip else [center_idx, a, b])
    return np.array(verts), np.array(faces, dtype=np.int64)


def make_primitive_model(kind: str, scale: float = 0.1, n_points: int = 500,
                         class_id: int = 1) -> ObjectModel:
    """Deterministic primitive point sets/meshes with known symmetry groups.

    cube: grid-sampled cube surface, full octahedral symmetry.
    bar_2fold: elongated ellipsoid, exact 180-degree symmetry about Z by
      mirrored construction; no smaller-angle symmetry.
    asymmetric_blob: deformed ellipsoid point cloud, trivial symmetry group.
    cylinder: capped cylinder mesh with discrete n-fold axial symmetry.
    """
    if scale <= 0:
        raise SynthError("scale must be positive")
    if kind == "cube":
        k = max(2, round(math.sqrt(max(n_points, 24) / 6)))
        pts, faces = _box_mesh(scale, scale, scale, k)
        return ObjectModel(class_id=class_id, name="cube", points=pts, faces=faces)
    if kind == "bar_2fold":
        # Elongated ellipsoid with strongly distinct semi-axes. Half the
        # points are Fibonacci-sphere samples; the other half is the same
        # set with x and y negated, so the point set maps onto itself under
        # a 180-degree rotation about Z exactly (sign flips are exact in
        # floating point). The smooth surface avoids the spurious SLoss
        # minima that flat box faces create.
        half = max(n_points, 24) // 2
        i = np.arange(half) + 0.5
        phi = np.arccos(1 - 2 * i / half)
        theta = math.pi * (1 + math.sqrt(5)) * i
        dirs = np.stack([np.sin(phi) * np.cos(theta),
                         np.sin(phi) * np.sin(theta),
                         np.cos(phi)], axis=1)
        p = dirs * (scale * np.array([1.0, 0.5, 0.15]))
        mirrored = p.copy()
        mirrored[:, 0] *= -1.0
        mirrored[:, 1] *= -1.0
        pts = np.concatenate([p, mirrored])
        # convex surface: a hull over a mirror-paired subset gives a
        # watertight decimated mesh (rendering stays self-consistent because
        # observed and hypothesis renders share the same faces)
        sel = np.unique(np.linspace(0, half - 1, min(72, half)).astype(int))
        sel = np.concatenate([sel, sel + half])
        faces = sel[ConvexHull(pts[sel]).simplices].astype(np.int64)
        return ObjectModel(class_id=class_id, name="bar_2fold", points=pts,
                           faces=faces)
    if kind == "cylinder":
        n_ang = max(8, int(math.sqrt(2 * n_points)))
        n_len = max(3, n_points // n_ang)
        pts, faces = _cylinder_mesh(0.35 * scale, scale, n_ang, n_len)
        return ObjectModel(class_id=class_id, name="cylinder", points=pts, faces=faces)
    if kind == "asymmetric_blob":
        rng = np.random.default_rng(20240521)
        n = max(n_points, 50)
        # Fibonacci sphere directions, radius modulated by fixed harmonics
        i = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * i / n)
        theta = math.pi * (1 + math.sqrt(5)) * i
        dirs = np.stack([np.sin(phi) * np.cos(theta),
                         np.sin(phi) * np.sin(theta),
                         np.cos(phi)], axis=1)
        r = 0.5 * scale * (1.0 + 0.25 * np.sin(3 * theta) * np.sin(2 * phi)
                           + 0.15 * np.cos(phi + 0.7))
        pts = dirs * r[:, None] * np.array([1.0, 0.75, 0.55])
        pts += 0.01 * scale * rng.standard_normal(pts.shape)
        # coarse convex-hull mesh over a subset; shaves shallow concavities
        # but keeps renders fast and self-consistent
        sel = np.unique(np.linspace(0, n - 1, min(150, n)).astype(int))
        faces = sel[ConvexHull(pts[sel]).simplices].astype(np.int64)
        return ObjectModel(class_id=class_id, name="asymmetric_blob",
                           points=pts, faces=faces)
    raise SynthError(f"unknown primitive kind: {kind!r} "
                     f"(expected one of {_PRIMITIVE_KINDS})")


# ---------------------------------------------------------------------------
# rendering


def _splat_spacing(model: ObjectModel) -> float:
    pts = model.points
    sample = pts if pts.shape[0] <= 2000 else pts[:: pts.shape[0] // 2000]
    d, _ = cKDTree(pts).query(sample, k=2)
    return float(np.mean(d[:, 1]))


@dataclass
class _Raster:
    depth: np.ndarray
    label: np.ndarray
    instance: np.ndarray
    points: np.ndarray
    normals: np.ndarray


def _new_raster(width: int, height: int) -> _Raster:
    return _Raster(
        depth=np.zeros((height, width)),
        label=np.zeros((height, width), dtype=np.uint16),
        instance=np.full((height, width), -1, dtype=np.int32),
        points=np.zeros((height, width, 3)),
        normals=np.zeros((height, width, 3)),
    )


def _raster_triangles(r: _Raster, verts_cam: np.ndarray, faces: np.ndarray,
                      intrinsics: CameraIntrinsics, class_id: int, inst: int):
    h, w = r.depth.shape
    fx, fy, px, py = intrinsics.fx, intrinsics.fy, intrinsics.px, intrinsics.py
    z = verts_cam[:, 2]
    u = fx * verts_cam[:, 0] / z + px
    v = fy * verts_cam[:, 1] / z + py
    inv_z = 1.0 / z
    for tri in faces:
        if np.any(z[tri] <= 1e-6):
            continue
        ua, ub, uc = u[tri]
        va, vb, vc = v[tri]
        x0 = max(0, int(math.floor(min(ua, ub, uc))))
        x1 = min(w - 1, int(math.ceil(max(ua, ub, uc))))
        y0 = max(0, int(math.floor(min(va, vb, vc))))
        y1 = min(h - 1, int(math.ceil(max(va, vb, vc))))
        if x1 < x0 or y1 < y0:
            continue
        denom = (ub - ua) * (vc - va) - (uc - ua) * (vb - va)
        if abs(denom) < 1e-12:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        b1 = ((gx - ua) * (vc - va) - (uc - ua) * (gy - va)) / denom
        b2 = ((ub - ua) * (gy - va) - (gx - ua) * (vb - va)) / denom
        b0 = 1.0 - b1 - b2
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        if not inside.any():
            continue
        izs = b0 * inv_z[tri[0]] + b1 * inv_z[tri[1]] + b2 * inv_z[tri[2]]
        zs = 1.0 / izs
        cur = r.depth[y0 : y1 + 1, x0 : x1 + 1]
        win = inside & ((cur == 0) | (zs < cur))
        if not win.any():
            continue
        p0, p1, p2 = verts_cam[tri]
        n = np.cross(p1 - p0, p2 - p0)
        nn = np.linalg.norm(n)
        if nn < 1e-15:
            continue
        n = n / nn
        if np.dot(n, (p0 + p1 + p2) / 3.0) > 0:
            n = -n  # orient toward the camera
        zw = zs[win]
        sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        r.depth[sub][win] = zw
        r.label[sub][win] = class_id
        r.instance[sub][win] = inst
        pts = np.stack([(gx[win] - px) / fx * zw, (gy[win] - py) / fy * zw, zw],
                       axis=1)
        r.points[sub][win] = pts
        r.normals[sub][win] = n


def _splat_points(r: _Raster, pts_cam: np.ndarray, normals_cam: np.ndarray,
                  spacing: float, intrinsics: CameraIntrinsics,
                  class_id: int, inst: int):
    h, w = r.depth.shape
    fx, fy, px, py = intrinsics.fx, intrinsics.fy, intrinsics.px, intrinsics.py
    order = np.argsort(-pts_cam[:, 2], kind="stable")  # far to near
    for i in order:
        x, y, z = pts_cam[i]
        if z <= 1e-6:
            continue
        u = fx * x / z + px
        v = fy * y / z + py
        rad = max(1, math.ceil(fx * spacing / z * 0.75))
        x0 = max(0, int(math.floor(u - rad)))
        x1 = min(w - 1, int(math.ceil(u + rad)))
        y0 = max(0, int(math.floor(v - rad)))
        y1 = min(h - 1, int(math.ceil(v + rad)))
        if x1 < x0 or y1 < y0:
            continue
        sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        cur = r.depth[sub]
        win = (cur == 0) | (z < cur)
        if not win.any():
            continue
        r.depth[sub][win] = z
        r.label[sub][win] = class_id
        r.instance[sub][win] = inst
        r.points[sub][win] = pts_cam[i]
        r.normals[sub][win] = normals_cam[i]


def _point_normals(model: ObjectModel) -> np.ndarray:
    """Model-frame point normals: stored ones, else local-plane fits."""
    if model.normals is not None:
        return model.normals
    pts = model.points
    k = min(9, pts.shape[0])
    _, idx = cKDTree(pts).query(pts, k=k)
    normals = np.zeros_like(pts)
    centroid_all = pts.mean(axis=0)
    for i in range(pts.shape[0]):
        nb = pts[idx[i]]
        nb = nb - nb.mean(axis=0)
        _, _, vt = np.linalg.svd(nb, full_matrices=False)
        n = vt[-1]
        if np.dot(n, pts[i] - centroid_all) < 0:
            n = -n  # outward
        normals[i] = n
    return normals


_NORMAL_CACHE: dict[int, np.ndarray] = {}


def _cached_point_normals(model: ObjectModel) -> np.ndarray:
    key = id(model)
    if key not in _NORMAL_CACHE:
        _NORMAL_CACHE[key] = _point_normals(model)
    return _NORMAL_CACHE[key]


_SPACING_CACHE: dict[int, float] = {}


def _cached_spacing(model: ObjectModel) -> float:
    key = id(model)
    if key not in _SPACING_CACHE:
        _SPACING_CACHE[key] = _splat_spacing(model)
    return _SPACING_CACHE[key]


def _render_instance(r: _Raster, model: ObjectModel, pose: Pose,
                     intrinsics: CameraIntrinsics, inst: int):
    rot = pose.rotation_matrix()
    pts_cam = model.points @ rot.T + pose.translation
    if model.faces is not None and model.faces.size:
        _raster_triangles(r, pts_cam, model.faces, intrinsics,
                          model.class_id, inst)
    else:
        normals_cam = _cached_point_normals(model) @ rot.T
        # orient toward the camera
        flip = np.sum(normals_cam * pts_cam, axis=1) > 0
        normals_cam[flip] = -normals_cam[flip]
        _splat_points(r, pts_cam, normals_cam, _cached_spacing(model),
                      intrinsics, model.class_id, inst)


def render_full(scene: Scene, models: dict[int, ObjectModel]) -> _Raster:
    """Z-buffer render returning depth/label/instance/point/normal buffers."""
    r = _new_raster(scene.width, scene.height)
    for inst, (cid, pose) in enumerate(scene.instances):
        if cid not in models:
            raise SynthError(f"scene references unknown class id {cid}")
        if pose.translation[2] <= 0:
            raise SynthError("instance depth Tz must be positive")
        _render_instance(r, models[cid], pose, scene.intrinsics, inst)
    return r


def render_scene(scene: Scene, models: dict[int, ObjectModel]):
    """Render to (DepthMap, LabelMap, RangeImage); nearest surface wins."""
    r = render_full(scene, models)
    return (DepthMap(depth=r.depth.astype(np.float32)),
            LabelMap(labels=r.label),
            RangeImage(depth=r.depth, points=r.points, normals=r.normals))


def ground_truth_fields(scene: Scene, models: dict[int, ObjectModel],
                        raster: _Raster | None = None):
    """Exact regression targets and per-instance ground truth for a scene.

    Each instance's visible pixels encode the unit direction toward its own
    projected center (which may be occluded or outside the image) and its
    ground-truth Tz. Returns (CenterField, [InstanceTruth]).
    """
    r = raster if raster is not None else render_full(scene, models)
    fld = CenterField(width=scene.width, height=scene.height)
    truths = []
    h, w = r.depth.shape
    for inst, (cid, pose) in enumerate(scene.instances):
        center = project(pose.translation, scene.intrinsics)
        tz = float(pose.translation[2])
        ys, xs = np.nonzero(r.instance == inst)
        if xs.size:
            dirs = directions_to_center(xs, ys, center)
            pl = fld.plane(cid)
            pl[ys, xs, 0] = dirs[:, 0]
            pl[ys, xs, 1] = dirs[:, 1]
            pl[ys, xs, 2] = tz
        solo = _new_raster(scene.width, scene.height)
        _render_instance(solo, models[cid], pose, scene.intrinsics, inst)
        solo_px = int(np.count_nonzero(solo.instance == inst))
        ci, cj = int(math.floor(center[0] + 0.5)), int(math.floor(center[1] + 0.5))
        occ = True
        if 0 <= cj < h and 0 <= ci < w:
            occ = r.instance[cj, ci] != inst
        truths.append(InstanceTruth(
            index=inst, class_id=cid, pose=pose, center=center, tz=tz,
            visible_pixels=int(xs.size), solo_pixels=solo_px,
            center_occluded=bool(occ)))
    return fld, truths


# ---------------------------------------------------------------------------
# noise


def perturb(fld: CenterField, labels: LabelMap, spec: NoiseSpec):
    """Noise-injected copies of a field and label map, seeded and
    deterministic. Directions get angular jitter, Tz planes Gaussian noise,
    and labels flip to a random other class with the configured rate.
    Zero-direction (center) pixels stay zero; unit norms are preserved.
    """
    if spec.is_zero:
        return fld.copy(), LabelMap(labels=labels.labels.copy())
    rng = np.random.default_rng(spec.rng_seed)
    out = fld.copy()
    class_ids = sorted(set(out.class_ids()) | set(labels.class_ids()))
    for cid in out.class_ids():
        pl = out.planes[cid]
        mask = (labels.labels == cid)
        ys, xs = np.nonzero(mask)
        if xs.size == 0:
            continue
        if spec.direction_sigma > 0:
            ang = rng.normal(0.0, spec.direction_sigma, xs.size)
            ca, sa = np.cos(ang), np.sin(ang)
            nx = pl[ys, xs, 0].astype(float)
            ny = pl[ys, xs, 1].astype(float)
            pl[ys, xs, 0] = (ca * nx - sa * ny).astype(np.float32)
            pl[ys, xs, 1] = (sa * nx + ca * ny).astype(np.float32)
        if spec.depth_sigma > 0:
            pl[ys, xs, 2] += rng.normal(0.0, spec.depth_sigma, xs.size).astype(np.float32)
    new_labels = labels.labels.copy()
    if spec.label_flip_rate > 0 and len(class_ids) >= 1:
        ys, xs = np.nonzero(labels.labels != 0)
        flip = rng.random(xs.size) < spec.label_flip_rate
        fy, fx = ys[flip], xs[flip]
        if fy.size:
            choices = np.array(class_ids, dtype=np.uint16)
            picks = choices[rng.integers(0, len(choices), fy.size)]
            cur = new_labels[fy, fx]
            same = picks == cur
            if len(class_ids) > 1:
                while same.any():
                    picks[same] = choices[rng.integers(0, len(choices),
                                                       int(same.sum()))]
                    same = picks == cur
            new_labels[fy, fx] = picks
    return out, LabelMap(labels=new_labels)


# ---------------------------------------------------------------------------
# random scenes


def default_registry() -> dict[int, ObjectModel]:
    """Primitive stand-ins: cube, bar, cylinder, blob, large cube."""
    reg = {
        1: make_primitive_model("cube", scale=0.10, n_points=600, class_id=1),
        2: make_primitive_model("bar_2fold", scale=0.10, n_points=600, class_id=2),
        3: make_primitive_model("cylinder", scale=0.12, n_points=600, class_id=3),
        4: make_primitive_model("asymmetric_blob", scale=0.12, n_points=900,
                                class_id=4),
        5: make_primitive_model("cube", scale=0.14, n_points=600, class_id=5),
    }
    reg[5].name = "cube_large"
    return reg


def random_scene(seed: int, models: dict[int, ObjectModel],
                 intrinsics: CameraIntrinsics | None = None,
                 width: int = 320, height: int = 240,
                 n_objects: tuple[int, int] = (3, 5),
                 tz_range: tuple[float, float] = (0.7, 1.4),
                 cluster: float = 0.35, unique_classes: bool = True) -> Scene:
    """Seeded random scene; objects cluster near the view center so
    occlusions (including occluded centers) are common.

    With unique_classes each class appears at most once, which keeps inlier
    depth averages free of cross-instance contamination.
    """
    rng = np.random.default_rng(seed)
    intr = intrinsics or CameraIntrinsics(fx=400.0, fy=400.0,
                                          px=width / 2.0, py=height / 2.0)
    n = int(rng.integers(n_objects[0], n_objects[1] + 1))
    cids = list(models)
    if unique_classes:
        n = min(n, len(cids))
        chosen = list(rng.choice(cids, size=n, replace=False))
    else:
        chosen = [cids[int(rng.integers(0, len(cids)))] for _ in range(n)]
    instances = []
    for cid in chosen:
        cid = int(cid)
        tz = float(rng.uniform(*tz_range))
        # keep the projected center well inside the image
        spread = cluster * min(width, height) / 2.0
        cx = width / 2.0 + float(rng.normal(0.0, spread))
        cy = height / 2.0 + float(rng.normal(0.0, spread))
        cx = min(max(cx, 0.15 * width), 0.85 * width)
        cy = min(max(cy, 0.15 * height), 0.85 * height)
        tx = (cx - intr.px) * tz / intr.fx
        ty = (cy - intr.py) * tz / intr.fy
        q = random_quat(rng)
        instances.append((cid, Pose(q, np.array([tx, ty, tz]))))
    return Scene(instances=instances, intrinsics=intr, width=width, height=height)


def perturbed_pose(pose: Pose, rot_deg: float, trans_m: float,
                   rng: np.random.Generator) -> Pose:
    """Pose composed with a random rotation (fixed angle, random axis) and a
    random translation offset of fixed magnitude."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    dq = quat_from_axis_angle(axis, math.radians(rot_deg))
    dt = rng.standard_normal(3)
    dt = dt / np.linalg.norm(dt) * trans_m
    return Pose(quat_multiply(dq, pose.quaternion), pose.translation + dt)
