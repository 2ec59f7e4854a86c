import numpy as np
import pytest

from posevote.ply import PlyError, load_model, load_ply, save_ply


def test_round_trip_points_only(tmp_path):
    pts = np.random.default_rng(0).standard_normal((20, 3))
    p = tmp_path / "m.ply"
    save_ply(p, pts)
    pts2, normals, faces = load_ply(p)
    assert np.allclose(pts, pts2)
    assert normals is None and faces is None


def test_round_trip_with_normals_and_faces(tmp_path):
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    normals = np.tile([0.0, 0.0, 1.0], (3, 1))
    faces = np.array([[0, 1, 2]])
    p = tmp_path / "m.ply"
    save_ply(p, pts, normals=normals, faces=faces)
    pts2, normals2, faces2 = load_ply(p)
    assert np.allclose(pts, pts2)
    assert np.allclose(normals, normals2)
    assert np.array_equal(faces, faces2)


def test_rejects_binary_format(tmp_path):
    p = tmp_path / "m.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\n"
                 "element vertex 0\nend_header\n")
    with pytest.raises(PlyError):
        load_ply(p)


def test_rejects_non_ply(tmp_path):
    p = tmp_path / "m.ply"
    p.write_text("obj\n")
    with pytest.raises(PlyError):
        load_ply(p)


def test_rejects_quad_faces(tmp_path):
    p = tmp_path / "m.ply"
    p.write_text("ply\nformat ascii 1.0\n"
                 "element vertex 4\nproperty float x\nproperty float y\n"
                 "property float z\nelement face 1\n"
                 "property list uchar int vertex_indices\nend_header\n"
                 "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    with pytest.raises(PlyError):
        load_ply(p)


def test_load_model(tmp_path):
    pts = np.array([[0, 0, 0], [0.05, 0, 0]])
    p = tmp_path / "m.ply"
    save_ply(p, pts)
    m = load_model(p, class_id=7)
    assert m.class_id == 7
    assert m.diameter == pytest.approx(0.05)
