import logging

import numpy as np
import pytest
import trimesh

from pqgeodesic.mesh import TriMesh


def right_triangle() -> TriMesh:
    return TriMesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def unit_square() -> TriMesh:
    """Two triangles split along the diagonal (1,0)-(0,1)"""
    return TriMesh.from_arrays([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 3], [1, 2, 3]])


def icosahedron() -> TriMesh:
    ico = trimesh.creation.icosahedron()
    return TriMesh.from_arrays(ico.vertices, ico.faces)


def grid(n: int, size: float = 1.0) -> TriMesh:
    """n x n square cells over [0, size]^2, each cut along its anti-diagonal"""
    xs = np.linspace(0.0, size, n + 1)
    vertices = np.array([[x, y] for y in xs for x in xs])
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            faces += [[a, b, d], [b, c, d]]
    return TriMesh.from_arrays(vertices, faces)


def l_shape() -> TriMesh:
    """Three unit cells forming an L, reflex corner at (1,1)"""
    vertices = [[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1], [0, 2], [1, 2]]
    faces = [[0, 1, 3], [1, 4, 3], [1, 2, 4], [2, 5, 4], [3, 4, 6], [4, 7, 6]]
    return TriMesh.from_arrays(vertices, faces)


def fan(n: int = 6) -> TriMesh:
    """Regular polygon around a central vertex 0"""
    angles = 2 * np.pi * np.arange(n) / n
    vertices = np.vstack([[0.0, 0.0], np.column_stack([np.cos(angles), np.sin(angles)])])
    faces = [[0, 1 + k, 1 + (k + 1) % n] for k in range(n)]
    return TriMesh.from_arrays(vertices, faces)


def sliver_square() -> TriMesh:
    """Unit square with a near-degenerate fan through (0.5, 0.01)"""
    vertices = [[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.01]]
    faces = [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    return TriMesh.from_arrays(vertices, faces)


def book() -> TriMesh:
    """Three triangles sharing the edge (0,1): a non-manifold edge"""
    vertices = [[0, 0, 0], [1, 0, 0], [0.5, 1, 0], [0.5, -1, 0], [0.5, 0, 1]]
    return TriMesh.from_arrays(vertices, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])


@pytest.fixture
def triangle_mesh():
    return right_triangle()


@pytest.fixture
def square_mesh():
    return unit_square()


@pytest.fixture
def ico_mesh():
    return icosahedron()


@pytest.fixture
def l_mesh():
    return l_shape()


@pytest.fixture
def fan_mesh():
    return fan()


@pytest.fixture
def square_obj(tmp_path):
    path = tmp_path / "square.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 4\nf 2 3 4\n")
    return path


@pytest.fixture
def env(monkeypatch, tmp_path):
    """Isolated configuration environment, log file and results under tmp_path"""
    for name in ("GEO_SOLVER_TOL", "GEO_MAX_ITER", "GEO_SOLVERS", "GEO_EPS_AREA", "GEO_TOL_NEG",
                 "GEO_MAX_WORKERS", "GEO_LOG_FORMAT", "GEO_CONTINUITY_TOL"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.setenv("GEO_LOG_FILE", str(tmp_path / "pipeline.log"))
    monkeypatch.setenv("GEO_OUT_PATH", str(tmp_path / "results"))
    monkeypatch.chdir(tmp_path)
    yield tmp_path
    root = logging.getLogger()
    for handler in [h for h in root.handlers if isinstance(h, logging.FileHandler)]:
        root.removeHandler(handler)
        handler.close()
