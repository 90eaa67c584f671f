"""
Quadratic (P2) and linear (P1) Lagrange elements on triangle meshes.

All operators map nodal values to per-face samples (rows are samples). Per
face the six P2 nodes are ordered (v200, v020, v002, v110, v011, v101): the
three corners, then the midpoints of edges (0,1), (1,2) and (2,0). Gradients
are stored as samples at the three corners of each face, expressed in the
face frame, laid out [g0x, g0y, g1x, g1y, g2x, g2y].
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from pqgeodesic.exceptions import BadBarycentricError
from pqgeodesic.mesh import FaceFrame, TriMesh
from pqgeodesic.sources import canonical_point

logger = logging.getLogger("pqgeodesic")

EDGE_A = np.array([0, 1, 2])
EDGE_B = np.array([1, 2, 0])

M2_REFERENCE = np.array([
    [6, -1, -1, 0, -4, 0],
    [-1, 6, -1, 0, 0, -4],
    [-1, -1, 6, -4, 0, 0],
    [0, 0, -4, 32, 16, 16],
    [-4, 0, 0, 16, 32, 16],
    [0, -4, 0, 16, 16, 32],
], dtype=np.float64) / 180.0

M1_REFERENCE = (np.ones((3, 3)) + np.eye(3)) / 12.0

BARYCENTER_WEIGHTS = np.array([-1.0, -1.0, -1.0, 4.0, 4.0, 4.0]) / 9.0

# rows: the 7 sample points per face (3 corners, 3 mid-edges, barycenter);
# columns: weights of the three corner gradient samples
SAMPLE_CORNER_WEIGHTS = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [1 / 3, 1 / 3, 1 / 3],
])

SAMPLE_LAMBDAS = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
    [1 / 3, 1 / 3, 1 / 3],
])


@dataclass(frozen=True)
class DofLayout:
    """Nodal indexing: vertex v is node v, edge e is node n_vertex + e (P2 only)"""
    n_vertex: int
    n_edge: int
    degree: int = 2

    @classmethod
    def p2(cls, mesh: TriMesh) -> "DofLayout":
        return cls(n_vertex=mesh.n_vertices, n_edge=mesh.n_edges, degree=2)

    @classmethod
    def p1(cls, mesh: TriMesh) -> "DofLayout":
        return cls(n_vertex=mesh.n_vertices, n_edge=0, degree=1)

    @property
    def total(self) -> int:
        return self.n_vertex + self.n_edge

    def vertex_node(self, v: int) -> int:
        return v

    def edge_node(self, e: int) -> int:
        if self.degree != 2:
            raise ValueError("P1 layouts have no edge nodes")
        return self.n_vertex + e

    def node_kinds(self) -> np.ndarray:
        return np.array(["vertex"] * self.n_vertex + ["edge"] * self.n_edge)

    def face_nodes(self, mesh: TriMesh) -> np.ndarray:
        """(F, 6) P2 nodes or (F, 3) P1 nodes of every face in basis order"""
        if self.degree == 1:
            return mesh.faces
        return np.hstack([mesh.faces, self.n_vertex + mesh.face_edges])

    def as_dict(self) -> dict:
        return {"n_vertex": self.n_vertex, "n_edge": self.n_edge, "degree": self.degree, "total": self.total}


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Named sparse linear map between indexed value spaces, stored as CSR"""
    name: str
    matrix: sparse.csr_matrix

    @classmethod
    def from_triplets(cls, name: str, rows, cols, values, shape: Tuple[int, int]) -> "SparseOperator":
        # coo -> csr sums duplicate coordinates
        matrix = sparse.coo_matrix(
            (np.ravel(values), (np.ravel(rows), np.ravel(cols))), shape=shape
        ).tocsr()
        matrix.eliminate_zeros()
        matrix.sort_indices()
        return cls(name=name, matrix=matrix)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(f"{self.name}*{other.name}", (self.matrix @ other.matrix).tocsr())
        return self.matrix @ other

    @property
    def T(self) -> "SparseOperator":
        return SparseOperator(f"{self.name}^T", self.matrix.T.tocsr())

    def to_triplets(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def dump(self, path: Union[str, Path]) -> None:
        """Writes 'row col value' lines for cross-checking against another implementation"""
        rows, cols, values = self.to_triplets()
        header = f"operator {self.name}\nshape {self.rows} {self.cols}\nnnz {len(values)}"
        with open(path, "w") as f:
            f.write("".join(f"# {line}\n" for line in header.splitlines()))
            for r, c, v in zip(rows, cols, values):
                f.write(f"{r} {c} {float(v)!r}\n")
        logger.info(f"Operator {self.name} dumped to {path}")


def check_barycentric(lam, tol_negative: float = 1e-12, tol_sum: float = 1e-9) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape[-1] != 3:
        raise BadBarycentricError(f"Barycentric coordinates need 3 components, got shape {lam.shape}")
    if not np.all(np.isfinite(lam)):
        raise BadBarycentricError("Barycentric coordinates are not finite")
    if np.any(lam < -tol_negative):
        raise BadBarycentricError(f"Negative barycentric component in {lam}")
    if np.any(np.abs(lam.sum(axis=-1) - 1.0) > tol_sum):
        raise BadBarycentricError(f"Barycentric coordinates {lam} do not sum to 1")
    return lam


def _p2_values(lam: np.ndarray) -> np.ndarray:
    vertex = 2.0 * lam ** 2 - lam
    edge = 4.0 * lam[..., EDGE_A] * lam[..., EDGE_B]
    return np.concatenate([vertex, edge], axis=-1)


def _p2_gradients(lam: np.ndarray, dl: np.ndarray) -> np.ndarray:
    """lam (..., 3) and barycentric gradients dl (..., 3, 2) -> (..., 6, 2)"""
    lam = lam[..., :, None]
    vertex = (4.0 * lam - 1.0) * dl
    edge = 4.0 * (lam[..., EDGE_A, :] * dl[..., EDGE_B, :] + lam[..., EDGE_B, :] * dl[..., EDGE_A, :])
    return np.concatenate([vertex, edge], axis=-2)


def barycentric_gradients(corners: np.ndarray) -> np.ndarray:
    """
    Gradients of the barycentric coordinates of 2D triangles

    grad(lambda_i) is the edge opposite to corner i rotated by +90 degrees,
    divided by twice the signed area.

    Args:
        corners: (..., 3, 2) corner coordinates

    Returns:
        (..., 3, 2) gradients
    """
    corners = np.asarray(corners, dtype=np.float64)
    opposite = corners[..., [2, 0, 1], :] - corners[..., [1, 2, 0], :]
    rotated = np.stack([-opposite[..., 1], opposite[..., 0]], axis=-1)
    d1 = corners[..., 1, :] - corners[..., 0, :]
    d2 = corners[..., 2, :] - corners[..., 0, :]
    twice_area = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    return rotated / twice_area[..., None, None]


def eval_p2_basis(lam) -> np.ndarray:
    """Values of the six quadratic Lagrange functions at barycentric point(s)"""
    return _p2_values(check_barycentric(lam))


def eval_p2_grad(lam, frame: FaceFrame, corners) -> np.ndarray:
    """
    Gradients of the six quadratic basis functions, in the face frame

    Args:
        lam: barycentric point(s), shape (3,) or (n, 3)
        frame: tangent frame of the face
        corners: (3, 3) ambient corner positions

    Returns:
        (6, 2) or (n, 6, 2) gradient vectors
    """
    lam = check_barycentric(lam)
    rel = np.asarray(corners, dtype=np.float64) - frame.origin
    local = np.column_stack([rel @ frame.e1, rel @ frame.e2])
    return _p2_gradients(lam, barycentric_gradients(local))


def eval_p1_basis(lam) -> np.ndarray:
    return check_barycentric(lam).copy()


def assemble_gradient(mesh: TriMesh, layout: DofLayout) -> SparseOperator:
    """G: 6|F| x (|V|+|E|), nodal values to corner gradient samples"""
    nf = mesh.n_faces
    dl = barycentric_gradients(mesh.local_corners)
    # (F, corner, basis, component)
    grads = np.stack([_p2_gradients(np.eye(3)[c][None, :], dl) for c in range(3)], axis=1)
    faces = np.arange(nf)[:, None, None, None]
    corner = np.arange(3)[None, :, None, None]
    comp = np.arange(2)[None, None, None, :]
    rows = np.broadcast_to(6 * faces + 2 * corner + comp, grads.shape)
    cols = np.broadcast_to(layout.face_nodes(mesh)[:, None, :, None], grads.shape)
    op = SparseOperator.from_triplets("G", rows, cols, grads, (6 * nf, layout.total))
    logger.info(f"Assembled gradient operator {op.shape} with {op.matrix.nnz} entries")
    return op


def assemble_gradient_p1(mesh: TriMesh) -> SparseOperator:
    """Constant per-face gradient of P1 functions: 2|F| x |V|"""
    nf = mesh.n_faces
    dl = barycentric_gradients(mesh.local_corners)  # (F, 3, 2)
    rows = 2 * np.arange(nf)[:, None, None] + np.arange(2)[None, None, :]
    rows = np.broadcast_to(rows, dl.shape)
    cols = np.broadcast_to(mesh.faces[:, :, None], dl.shape)
    return SparseOperator.from_triplets("G1", rows, cols, dl, (2 * nf, mesh.n_vertices))


def _block_diagonal(name: str, blocks: np.ndarray) -> SparseOperator:
    nf, k, _ = blocks.shape
    offsets = k * np.arange(nf)[:, None, None]
    rows = np.broadcast_to(offsets + np.arange(k)[None, :, None], blocks.shape)
    cols = np.broadcast_to(offsets + np.arange(k)[None, None, :], blocks.shape)
    return SparseOperator.from_triplets(name, rows, cols, blocks, (nf * k, nf * k))


def assemble_mass_p1(mesh: TriMesh) -> Tuple[np.ndarray, SparseOperator]:
    """Per-face P1 mass blocks (A/6 diagonal, A/12 off-diagonal) and the |V| x |V| assembly"""
    blocks = mesh.face_areas[:, None, None] * M1_REFERENCE
    rows = np.broadcast_to(mesh.faces[:, :, None], blocks.shape)
    cols = np.broadcast_to(mesh.faces[:, None, :], blocks.shape)
    return blocks, SparseOperator.from_triplets("M1", rows, cols, blocks, (mesh.n_vertices, mesh.n_vertices))


def assemble_mass_p2(mesh: TriMesh, layout: DofLayout) -> Tuple[np.ndarray, SparseOperator]:
    """Per-face P2 mass blocks A(t)/180 * M and the global Q2^T M2 Q2"""
    blocks = mesh.face_areas[:, None, None] * M2_REFERENCE
    q2 = _selection(mesh, layout)
    m2 = _block_diagonal("M2", blocks)
    global_mass = SparseOperator("Q2^T M2 Q2", (q2.matrix.T @ m2.matrix @ q2.matrix).tocsr())
    return blocks, global_mass


def assemble_mass_vec(mesh: TriMesh) -> Tuple[np.ndarray, SparseOperator]:
    """Vector mass M1(t) kron I2 over the corner gradient samples, block-diagonal 6|F| x 6|F|"""
    blocks = np.kron(mesh.face_areas[:, None, None] * M1_REFERENCE, np.eye(2))
    return blocks, _block_diagonal("Mchi", blocks)


def _selection(mesh: TriMesh, layout: DofLayout) -> SparseOperator:
    nodes = layout.face_nodes(mesh)
    k = nodes.shape[1]
    rows = np.arange(mesh.n_faces * k)
    return SparseOperator.from_triplets("Q2", rows, nodes.ravel(), np.ones(len(rows)), (len(rows), layout.total))


@dataclass(frozen=True, eq=False)
class SamplingOperators:
    q2: SparseOperator
    q2_bar: SparseOperator
    q_chi_bar: SparseOperator


def assemble_sampling(mesh: TriMesh, layout: DofLayout) -> SamplingOperators:
    """
    Q2 copies nodal values to the six nodes of each face. Q2_bar adds the
    barycenter value as a seventh row per face, and Q_chi_bar interpolates the
    corner gradient samples to the same seven points.
    """
    nf = mesh.n_faces
    nodes = layout.face_nodes(mesh)
    q2 = _selection(mesh, layout)

    pick_rows = 7 * np.arange(nf)[:, None] + np.arange(6)[None, :]
    bary_rows = np.broadcast_to(7 * np.arange(nf)[:, None] + 6, (nf, 6))
    q2_bar = SparseOperator.from_triplets(
        "Q2_bar",
        np.concatenate([pick_rows.ravel(), bary_rows.ravel()]),
        np.concatenate([nodes.ravel(), nodes.ravel()]),
        np.concatenate([np.ones(6 * nf), np.tile(BARYCENTER_WEIGHTS, nf)]),
        (7 * nf, layout.total),
    )

    # (F, sample, corner, component)
    shape = (nf, 7, 3, 2)
    f = np.arange(nf)[:, None, None, None]
    p = np.arange(7)[None, :, None, None]
    c = np.arange(3)[None, None, :, None]
    comp = np.arange(2)[None, None, None, :]
    weights = np.broadcast_to(SAMPLE_CORNER_WEIGHTS[None, :, :, None], shape)
    q_chi_bar = SparseOperator.from_triplets(
        "Qchi_bar",
        np.broadcast_to(14 * f + 2 * p + comp, shape),
        np.broadcast_to(6 * f + 2 * c + comp, shape),
        weights,
        (14 * nf, 6 * nf),
    )
    return SamplingOperators(q2=q2, q2_bar=q2_bar, q_chi_bar=q_chi_bar)


def assemble_b2(mesh: TriMesh, layout: DofLayout, sources: Sequence) -> SparseOperator:
    """
    B2: |B| x nodes, interpolation of nodal values at the source points

    Vertex and edge sources are moved to the lowest-index adjacent face first.
    """
    rows, cols, values = [], [], []
    for b, point in enumerate(sources):
        point = canonical_point(mesh, point)
        nodes = layout.face_nodes(mesh)[point.face]
        weights = _p2_values(point.lam) if layout.degree == 2 else point.lam
        rows.extend([b] * len(nodes))
        cols.extend(nodes)
        values.extend(weights)
    return SparseOperator.from_triplets("B2" if layout.degree == 2 else "B1", rows, cols, values, (len(sources), layout.total))


@dataclass(frozen=True, eq=False)
class FemOperators:
    """Everything the P2 program needs, assembled once per mesh"""
    layout: DofLayout
    gradient: SparseOperator
    sampling: SamplingOperators
    mass_blocks: np.ndarray
    mass: SparseOperator
    mass_vec_blocks: np.ndarray
    mass_vec: SparseOperator

    @property
    def integration_weights(self) -> np.ndarray:
        """(Q2^T M2 Q2) 1, so that w.u integrates u over the surface"""
        return self.mass.matrix @ np.ones(self.layout.total)


def assemble_operators(mesh: TriMesh, layout: DofLayout = None) -> FemOperators:
    layout = layout or DofLayout.p2(mesh)
    mass_blocks, mass = assemble_mass_p2(mesh, layout)
    vec_blocks, mass_vec = assemble_mass_vec(mesh)
    return FemOperators(
        layout=layout,
        gradient=assemble_gradient(mesh, layout),
        sampling=assemble_sampling(mesh, layout),
        mass_blocks=mass_blocks,
        mass=mass,
        mass_vec_blocks=vec_blocks,
        mass_vec=mass_vec,
    )


@dataclass(frozen=True, eq=False)
class P1Operators:
    layout: DofLayout
    gradient: SparseOperator
    mass_blocks: np.ndarray
    mass: SparseOperator


def assemble_operators_p1(mesh: TriMesh) -> P1Operators:
    blocks, mass = assemble_mass_p1(mesh)
    return P1Operators(layout=DofLayout.p1(mesh), gradient=assemble_gradient_p1(mesh), mass_blocks=blocks, mass=mass)


def interpolate(values: np.ndarray, mesh: TriMesh, layout: DofLayout, faces, lambdas) -> np.ndarray:
    """Evaluates a nodal field at barycentric points, P2 or P1 according to the layout"""
    faces = np.atleast_1d(np.asarray(faces))
    lambdas = np.atleast_2d(check_barycentric(lambdas, tol_negative=1e-9, tol_sum=1e-8))
    weights = _p2_values(lambdas) if layout.degree == 2 else lambdas
    return np.einsum("nk,nk->n", weights, np.asarray(values)[layout.face_nodes(mesh)[faces]])
