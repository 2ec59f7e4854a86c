"""ASCII PLY mesh I/O (vertices x y z [nx ny nz], optional triangle faces)."""

from __future__ import annotations

import numpy as np

from .geometry import GeometryError, ObjectModel


class PlyError(ValueError):
    pass


def load_ply(path):
    """Parse an ASCII PLY file.

    Returns (points, normals, faces); normals/faces are None when absent.
    Only the x y z [nx ny nz] vertex layout and triangle faces are accepted.
    """
    with open(path, "r") as f:
        lines = [ln.strip() for ln in f]
    if not lines or lines[0] != "ply":
        raise PlyError("not a PLY file")

    n_vertices = 0
    n_faces = 0
    vertex_props = []
    current_element = None
    i = 1
    fmt_seen = False
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line or line.startswith("comment"):
            continue
        tokens = line.split()
        if tokens[0] == "format":
            if tokens[1] != "ascii":
                raise PlyError("only ASCII PLY is supported")
            fmt_seen = True
        elif tokens[0] == "element":
            current_element = tokens[1]
            if tokens[1] == "vertex":
                n_vertices = int(tokens[2])
            elif tokens[1] == "face":
                n_faces = int(tokens[2])
            else:
                raise PlyError(f"unsupported element: {tokens[1]}")
        elif tokens[0] == "property":
            if current_element == "vertex":
                vertex_props.append(tokens[-1])
            elif current_element == "face":
                if tokens[1] != "list":
                    raise PlyError("face element must use a list property")
        elif tokens[0] == "end_header":
            break
        else:
            raise PlyError(f"unexpected header line: {line}")
    else:
        raise PlyError("missing end_header")
    if not fmt_seen:
        raise PlyError("missing format line")

    has_normals = vertex_props[:6] == ["x", "y", "z", "nx", "ny", "nz"]
    if not has_normals and vertex_props[:3] != ["x", "y", "z"]:
        raise PlyError(f"unsupported vertex layout: {vertex_props}")
    n_cols = 6 if has_normals else 3

    body = [ln for ln in lines[i:] if ln]
    if len(body) < n_vertices + n_faces:
        raise PlyError("truncated PLY body")

    vdata = np.array(
        [[float(v) for v in body[j].split()[:n_cols]] for j in range(n_vertices)]
    ).reshape(n_vertices, n_cols)
    points = vdata[:, :3]
    normals = vdata[:, 3:6] if has_normals else None

    faces = None
    if n_faces:
        rows = []
        for j in range(n_vertices, n_vertices + n_faces):
            tokens = body[j].split()
            count = int(tokens[0])
            if count != 3:
                raise PlyError("only triangle faces are supported")
            rows.append([int(t) for t in tokens[1:4]])
        faces = np.array(rows, dtype=np.int64)
    return points, normals, faces


def save_ply(path, points, normals=None, faces=None):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {points.shape[0]}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        if normals is not None:
            f.write("property float nx\nproperty float ny\nproperty float nz\n")
        if faces is not None:
            faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
            f.write(f"element face {faces.shape[0]}\n")
            f.write("property list uchar int vertex_indices\n")
        f.write("end_header\n")
        if normals is not None:
            normals = np.asarray(normals, dtype=float).reshape(-1, 3)
            for p, n in zip(points, normals):
                f.write("%.9g %.9g %.9g %.9g %.9g %.9g\n" % (*p, *n))
        else:
            for p in points:
                f.write("%.9g %.9g %.9g\n" % tuple(p))
        if faces is not None:
            for tri in faces:
                f.write("3 %d %d %d\n" % tuple(tri))


def load_model(path, class_id: int, name: str | None = None) -> ObjectModel:
    points, normals, faces = load_ply(path)
    if normals is not None:
        norms = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise GeometryError("model normals must be unit length")
    return ObjectModel(class_id=class_id, name=name or str(path),
                       points=points, normals=normals, faces=faces)
