"""
Triangle mesh container, file ingestion, and the geometric operations the
solver and the harness need: tangent frames, 1-to-4 subdivision with lineage
maps, sphere projection, normalization and vertex noise.
"""

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import trimesh

from pqgeodesic.exceptions import (
    CenterCoincidenceError,
    DegenerateFaceError,
    EmptyMeshError,
    MeshLineageError,
    ParseError,
)

logger = logging.getLogger("pqgeodesic")

SUPPORTED_FORMATS = ("obj", "off", "ply")

# corner pairs spanned by the three edges of a face, edge k runs from corner k to corner k+1
EDGE_CORNERS = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass(frozen=True)
class FaceFrame:
    """Orthonormal tangent frame of one face, e1 x e2 along the face normal"""
    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    area: float


@dataclass(frozen=True, eq=False)
class TriMesh:
    """
    Indexed triangle surface with a canonical edge table.

    Edges are stored as (min vertex, max vertex) pairs sorted lexicographically,
    so nodal numbering built on top of the table is reproducible. An edge may be
    shared by any number of faces. Instances are immutable; build them with
    ``TriMesh.from_arrays`` which validates the input.
    """
    vertices: np.ndarray
    faces: np.ndarray
    edges: np.ndarray
    face_edges: np.ndarray
    face_edge_flipped: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, faces, eps_area: float = 1e-12) -> "TriMesh":
        """
        Validates positions and faces and builds the edge table

        Args:
            vertices: (n, 3) or (n, 2) positions, 2D input is padded with z=0
            faces: (m, 3) vertex indices, counter-clockwise
            eps_area: faces with area below eps_area * bbox_diagonal**2 are rejected

        Returns:
            TriMesh
        """
        vertices = np.array(vertices, dtype=np.float64)
        faces = np.array(faces, dtype=np.int64)
        if faces.size == 0:
            raise EmptyMeshError("Mesh has no faces")
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise ParseError(f"Vertices must have shape (n, 3), got {vertices.shape}")
        if vertices.shape[1] == 2:
            vertices = np.column_stack([vertices, np.zeros(len(vertices))])
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ParseError(f"Faces must have shape (m, 3), got {faces.shape}")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise ParseError("Face references a vertex index out of range")
        repeated = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 2] == faces[:, 0])
        if np.any(repeated):
            raise ParseError(f"Face {int(np.flatnonzero(repeated)[0])} repeats a vertex")

        pairs = faces[:, EDGE_CORNERS]
        canonical = np.sort(pairs, axis=2).reshape(-1, 2)
        edges, inverse = np.unique(canonical, axis=0, return_inverse=True)

        mesh = cls(
            vertices=vertices,
            faces=faces,
            edges=edges,
            face_edges=inverse.reshape(len(faces), 3),
            face_edge_flipped=pairs[:, :, 0] > pairs[:, :, 1],
        )
        for name in ("vertices", "faces", "edges", "face_edges", "face_edge_flipped"):
            getattr(mesh, name).setflags(write=False)

        threshold = eps_area * mesh.bbox_diagonal ** 2
        bad = np.flatnonzero(mesh.face_areas <= threshold)
        if len(bad):
            raise DegenerateFaceError(int(bad[0]), float(mesh.face_areas[bad[0]]), threshold)
        return mesh

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def _face_cross(self) -> np.ndarray:
        p = self.vertices[self.faces]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._face_cross, axis=1)

    @property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]], axis=1)

    @property
    def mean_edge_length(self) -> float:
        return float(self.edge_lengths.mean())

    @cached_property
    def edge_face_count(self) -> np.ndarray:
        return np.bincount(self.face_edges.ravel(), minlength=self.n_edges)

    @property
    def boundary_edges(self) -> np.ndarray:
        """Boolean flag per edge, True when exactly one face uses it"""
        return self.edge_face_count == 1

    @property
    def is_manifold(self) -> bool:
        return bool(np.all(self.edge_face_count <= 2))

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @cached_property
    def frames(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-face (origin, e1, e2) arrays, e1 along the first face edge and e2 = n x e1"""
        p = self.vertices[self.faces]
        first = p[:, 1] - p[:, 0]
        e1 = first / np.linalg.norm(first, axis=1)[:, None]
        normal = self._face_cross / np.linalg.norm(self._face_cross, axis=1)[:, None]
        e2 = np.cross(normal, e1)
        return p[:, 0], e1, e2

    @cached_property
    def local_corners(self) -> np.ndarray:
        """(F, 3, 2) corner coordinates of every face in its own frame"""
        origin, e1, e2 = self.frames
        rel = self.vertices[self.faces] - origin[:, None, :]
        return np.stack([np.einsum("fcd,fd->fc", rel, e1), np.einsum("fcd,fd->fc", rel, e2)], axis=2)

    def face_frame(self, f: int) -> FaceFrame:
        origin, e1, e2 = self.frames
        return FaceFrame(origin=origin[f], e1=e1[f], e2=e2[f], area=float(self.face_areas[f]))

    def to_ambient(self, samples: np.ndarray) -> np.ndarray:
        """Maps (F, k, 2) tangent samples given in face frames to (F, k, 3) vectors"""
        _, e1, e2 = self.frames
        return samples[..., 0:1] * e1[:, None, :] + samples[..., 1:2] * e2[:, None, :]

    def incident_faces(self, v: int) -> np.ndarray:
        return np.flatnonzero(np.any(self.faces == v, axis=1))

    def edge_index(self, a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        pos = np.searchsorted(self.edges[:, 0], key[0], side="left")
        end = np.searchsorted(self.edges[:, 0], key[0], side="right")
        hits = np.flatnonzero(self.edges[pos:end, 1] == key[1])
        if len(hits) == 0:
            raise KeyError(f"No edge between vertices {a} and {b}")
        return int(pos + hits[0])

    def edge_faces(self, e: int) -> np.ndarray:
        return np.flatnonzero(np.any(self.face_edges == e, axis=1))

    def points(self, faces: np.ndarray, lambdas: np.ndarray) -> np.ndarray:
        """Ambient positions of barycentric points"""
        return np.einsum("nc,ncd->nd", np.asarray(lambdas, dtype=float), self.vertices[np.asarray(faces)])

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same combinatorics with new positions, no re-validation"""
        vertices = np.array(vertices, dtype=np.float64)
        vertices.setflags(write=False)
        return replace(self, vertices=vertices)

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=np.array(self.vertices), faces=np.array(self.faces), process=False)


@dataclass(frozen=True, eq=False)
class SubdivisionMap:
    """
    Lineage of one 1-to-4 subdivision step.

    Fine vertex v < coarse_n_vertices is coarse vertex v, fine vertex
    coarse_n_vertices + e is the midpoint of coarse edge e. Fine face 4f + c is
    child c of coarse face f, and face_corner_lambda holds the barycentric
    coordinates of its three corners inside the parent.
    """
    coarse_n_vertices: int
    coarse_n_edges: int
    coarse_n_faces: int
    vertex_origin_kind: np.ndarray  # 0 = coarse vertex, 1 = coarse edge
    vertex_origin_index: np.ndarray
    face_parent: np.ndarray
    face_corner_lambda: np.ndarray

    @property
    def fine_n_vertices(self) -> int:
        return self.coarse_n_vertices + self.coarse_n_edges

    @property
    def fine_n_faces(self) -> int:
        return 4 * self.coarse_n_faces


_I, _J, _K = np.eye(3)
_IJ, _JK, _KI = (_I + _J) / 2, (_J + _K) / 2, (_K + _I) / 2
CHILD_CORNER_LAMBDA = np.array([
    [_IJ, _JK, _KI],
    [_I, _IJ, _KI],
    [_J, _JK, _IJ],
    [_K, _KI, _JK],
])


def subdivide_1to4(mesh: TriMesh) -> Tuple[TriMesh, SubdivisionMap]:
    """Splits every face into four at its edge midpoints, without smoothing"""
    nv, ne, nf = mesh.n_vertices, mesh.n_edges, mesh.n_faces
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    i, j, k = mesh.faces.T
    ij, jk, ki = (nv + mesh.face_edges).T
    faces = np.stack([
        np.stack([ij, jk, ki], axis=1),
        np.stack([i, ij, ki], axis=1),
        np.stack([j, jk, ij], axis=1),
        np.stack([k, ki, jk], axis=1),
    ], axis=1).reshape(-1, 3)

    fine = TriMesh.from_arrays(vertices, faces, eps_area=0.0)
    lineage = SubdivisionMap(
        coarse_n_vertices=nv,
        coarse_n_edges=ne,
        coarse_n_faces=nf,
        vertex_origin_kind=np.concatenate([np.zeros(nv, dtype=np.int8), np.ones(ne, dtype=np.int8)]),
        vertex_origin_index=np.concatenate([np.arange(nv), np.arange(ne)]),
        face_parent=np.repeat(np.arange(nf), 4),
        face_corner_lambda=np.tile(CHILD_CORNER_LAMBDA, (nf, 1, 1)),
    )
    return fine, lineage


def locate_in_coarse(fine: TriMesh, lineage: Sequence[SubdivisionMap]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Locates every vertex of ``fine`` on the coarsest mesh of a subdivision chain

    Args:
        fine: the finest mesh
        lineage: subdivision maps ordered from coarse to fine, the last one produced ``fine``

    Returns:
        (faces, lambdas) on the coarsest mesh, one row per fine vertex
    """
    if not lineage:
        faces, corners = _first_corner(fine)
        return faces, np.eye(3)[corners]
    for coarse, finer in zip(lineage[:-1], lineage[1:]):
        if finer.coarse_n_faces != coarse.fine_n_faces or finer.coarse_n_vertices != coarse.fine_n_vertices:
            raise MeshLineageError("Subdivision maps do not form a chain")
    last = lineage[-1]
    if fine.n_faces != last.fine_n_faces or fine.n_vertices != last.fine_n_vertices:
        raise MeshLineageError(
            f"Mesh with {fine.n_vertices} vertices / {fine.n_faces} faces was not produced by this lineage"
        )

    faces, corners = _first_corner(fine)
    lambdas = last.face_corner_lambda[faces, corners]
    faces = last.face_parent[faces]
    for step in reversed(lineage[:-1]):
        lambdas = np.einsum("nc,ncd->nd", lambdas, step.face_corner_lambda[faces])
        faces = step.face_parent[faces]
    return faces, lambdas


def _first_corner(mesh: TriMesh) -> Tuple[np.ndarray, np.ndarray]:
    values, first = np.unique(mesh.faces.ravel(), return_index=True)
    if len(values) != mesh.n_vertices:
        raise MeshLineageError("Mesh has vertices without incident faces")
    return first // 3, first % 3


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    """Meshes M0..Mn from repeated 1-to-4 subdivision plus the maps between them"""
    meshes: List[TriMesh]
    lineage: List[SubdivisionMap]

    @property
    def levels(self) -> int:
        return len(self.meshes) - 1

    def locate(self, coarse_level: int, fine_level: int) -> Tuple[np.ndarray, np.ndarray]:
        return locate_in_coarse(self.meshes[fine_level], self.lineage[coarse_level:fine_level])


def build_hierarchy(base: TriMesh, levels: int, sphere: Optional[Tuple[np.ndarray, float]] = None) -> MeshHierarchy:
    """
    Subdivides ``levels`` times; with ``sphere=(center, radius)`` every new level is
    projected back onto that sphere.
    """
    meshes, lineage = [base], []
    for _ in range(levels):
        fine, step = subdivide_1to4(meshes[-1])
        if sphere is not None:
            fine = project_to_sphere(fine, *sphere)
        meshes.append(fine)
        lineage.append(step)
    logger.info(f"Built hierarchy with {levels} levels, finest mesh has {meshes[-1].n_vertices} vertices")
    return MeshHierarchy(meshes=meshes, lineage=lineage)


def project_to_sphere(mesh: TriMesh, center=(0.0, 0.0, 0.0), radius: float = 1.0) -> TriMesh:
    """Moves every vertex radially onto the sphere (center, radius)"""
    center = np.asarray(center, dtype=float)
    rel = mesh.vertices - center
    norms = np.linalg.norm(rel, axis=1)
    scale = max(mesh.bbox_diagonal, np.abs(center).max(), 1.0)
    if np.any(norms <= 1e-14 * scale):
        raise CenterCoincidenceError(f"Vertex {int(np.argmin(norms))} coincides with the projection center")
    return mesh.with_vertices(center + radius * rel / norms[:, None])


def normalize_mesh(mesh: TriMesh) -> Tuple[TriMesh, float]:
    """
    Scales the mesh uniformly to unit bounding-box diagonal.

    Returns the scale s with original = s * normalized; squared distances
    computed on the normalized mesh scale back by s**2.
    """
    scale = mesh.bbox_diagonal
    if scale == 1.0:
        return mesh, 1.0
    return mesh.with_vertices(mesh.vertices / scale), scale


def add_gaussian_noise(mesh: TriMesh, sigma: float, seed: int) -> TriMesh:
    """Perturbs each coordinate with i.i.d. N(0, sigma^2) samples, deterministic per seed"""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return mesh
    rng = np.random.default_rng(seed)
    return mesh.with_vertices(mesh.vertices + rng.normal(0.0, sigma, size=mesh.vertices.shape))


def load_mesh(path: Union[str, Path], format: Optional[str] = None, eps_area: float = 1e-12) -> TriMesh:
    """
    Loads an OBJ, OFF or PLY (ASCII or binary) triangle mesh

    Args:
        path: mesh file
        format: one of 'obj', 'off', 'ply', default from the file suffix
        eps_area: relative degeneracy threshold, see TriMesh.from_arrays

    Returns:
        TriMesh
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in SUPPORTED_FORMATS:
        raise ParseError(f"Unsupported mesh format '{fmt}' for {path}")
    if not path.is_file():
        raise ParseError(f"Mesh file {path} does not exist")

    kwargs = {"maintain_order": True} if fmt == "obj" else {}
    try:
        loaded = trimesh.load(str(path), file_type=fmt, process=False, force="mesh", **kwargs)
    except Exception as e:
        raise ParseError(f"Failed to parse {path}: {e}") from e
    faces = np.asarray(getattr(loaded, "faces", np.empty((0, 3))))
    if len(faces) == 0:
        raise EmptyMeshError(f"{path} contains no faces")

    mesh = TriMesh.from_arrays(np.asarray(loaded.vertices, dtype=np.float64), faces, eps_area=eps_area)
    logger.info(f"Loaded {path.name}: |V|={mesh.n_vertices}, |E|={mesh.n_edges}, |F|={mesh.n_faces}")
    return mesh
