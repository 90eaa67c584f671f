import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss
from numpy.testing import assert_allclose

from pqgeodesic.exceptions import BadBarycentricError
from pqgeodesic.fem import (
    M2_REFERENCE,
    SAMPLE_LAMBDAS,
    DofLayout,
    SparseOperator,
    assemble_b2,
    assemble_gradient,
    assemble_mass_p1,
    assemble_operators,
    assemble_operators_p1,
    check_barycentric,
    eval_p2_basis,
    eval_p2_grad,
    interpolate,
)
from pqgeodesic.mesh import TriMesh
from pqgeodesic.sources import source_from_vertex, source_point
from tests.conftest import grid, icosahedron


def f(p):
    x, y = p[..., 0], p[..., 1]
    return x ** 2 + 3 * x * y - y ** 2 + 2 * x


def grad_f(p):
    x, y = p[..., 0], p[..., 1]
    return np.stack([2 * x + 3 * y + 2, 3 * x - 2 * y, np.zeros_like(x)], axis=-1)


def node_positions(mesh):
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    return np.vstack([mesh.vertices, midpoints])


def triangle_quadrature(func, corners, n=8):
    """Gauss-Legendre on the unit square collapsed onto the triangle"""
    x, w = leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    s, t = np.meshgrid(x, x, indexing="ij")
    ws = np.outer(w, w) * s
    lam = np.stack([1.0 - s, s * (1.0 - t), s * t], axis=-1)
    points = lam @ corners
    d1, d2 = corners[1] - corners[0], corners[2] - corners[0]
    twice_area = np.linalg.norm(np.cross(d1, d2))
    return twice_area * np.sum(ws * func(points))


def collapsed_rule(n=8):
    """Barycentric points and area fractions of the collapsed Gauss-Legendre rule"""
    x, w = leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    s, t = np.meshgrid(x, x, indexing="ij")
    lam = np.stack([1.0 - s, s * (1.0 - t), s * t], axis=-1).reshape(-1, 3)
    return lam, 2.0 * (np.outer(w, w) * s).ravel()


def p2_values(lam):
    vertex = 2.0 * lam ** 2 - lam
    edge = 4.0 * lam * np.roll(lam, -1, axis=-1)
    return np.concatenate([vertex, edge], axis=-1)


def p2_gradients(lam, dl):
    """(k, 6, 2) basis gradients from barycentric gradients dl (3, 2)"""
    vertex = (4.0 * lam[:, :, None] - 1.0) * dl[None]
    nxt = [1, 2, 0]
    edge = 4.0 * (lam[:, :, None] * dl[nxt][None] + lam[:, nxt, None] * dl[None])
    return np.concatenate([vertex, edge], axis=1)


def affine_inverse(local):
    """Rows i of the result map (x, y, 1) to lambda_i"""
    return np.linalg.inv(np.vstack([local.T, np.ones(3)]))


def random_triangles(count=25, seed=11):
    rng = np.random.default_rng(seed)
    triangles = []
    while len(triangles) < count:
        corners = rng.normal(size=(3, 3))
        if 0.5 * np.linalg.norm(np.cross(corners[1] - corners[0], corners[2] - corners[0])) > 0.1:
            triangles.append(TriMesh.from_arrays(corners, [[0, 1, 2]]))
    return triangles


RANDOM_TRIANGLES = random_triangles()


def test_basis_is_nodal():
    nodes = np.vstack([np.eye(3), SAMPLE_LAMBDAS[3:6]])
    assert_allclose(eval_p2_basis(nodes), np.eye(6), atol=1e-15)


def test_basis_partition_of_unity(triangle_mesh):
    lam = np.random.default_rng(0).dirichlet(np.ones(3), size=1000)
    assert_allclose(eval_p2_basis(lam).sum(axis=1), 1.0, atol=1e-14)
    corners = triangle_mesh.vertices[triangle_mesh.faces[0]]
    grads = eval_p2_grad(lam, triangle_mesh.face_frame(0), corners)
    assert grads.shape == (1000, 6, 2)
    assert_allclose(grads.sum(axis=1), 0.0, atol=1e-12)


def test_basis_gradients_sum_to_zero(triangle_mesh):
    grads = eval_p2_grad([0.2, 0.3, 0.5], triangle_mesh.face_frame(0), triangle_mesh.vertices[triangle_mesh.faces[0]])
    assert grads.shape == (6, 2)
    assert_allclose(grads.sum(axis=0), 0.0, atol=1e-14)


def test_vertex_basis_gradient_on_reference_triangle(triangle_mesh):
    grads = eval_p2_grad([1.0, 0.0, 0.0], triangle_mesh.face_frame(0), triangle_mesh.vertices[triangle_mesh.faces[0]])
    assert_allclose(grads[0], [-3.0, -3.0], atol=1e-14)
    assert_allclose(grads[1], [-1.0, 0.0], atol=1e-14)
    assert_allclose(grads[2], [0.0, -1.0], atol=1e-14)
    assert_allclose(grads[3], [4.0, 0.0], atol=1e-14)
    assert_allclose(grads[5], [0.0, 4.0], atol=1e-14)


def test_bad_barycentric():
    with pytest.raises(BadBarycentricError):
        check_barycentric([0.5, 0.6, -0.1])
    with pytest.raises(BadBarycentricError):
        check_barycentric([0.5, 0.6, 0.1])
    with pytest.raises(BadBarycentricError):
        check_barycentric([0.5, 0.5])


def test_reference_mass_is_positive_definite():
    assert np.all(np.linalg.eigvalsh(M2_REFERENCE) > 0)
    assert_allclose(M2_REFERENCE.sum(), 1.0)


def test_single_triangle_weights(triangle_mesh):
    ops = assemble_operators(triangle_mesh)
    w = ops.integration_weights
    assert_allclose(w[:3], 0.0, atol=1e-15)
    assert_allclose(w[3:], 0.5 / 3)
    assert_allclose(w.sum(), triangle_mesh.total_area)


def test_operator_shapes(square_mesh):
    ops = assemble_operators(square_mesh)
    nf, n = square_mesh.n_faces, 9
    assert ops.gradient.shape == (6 * nf, n)
    assert ops.sampling.q2.shape == (6 * nf, n)
    assert ops.sampling.q2_bar.shape == (7 * nf, n)
    assert ops.sampling.q_chi_bar.shape == (14 * nf, 6 * nf)
    assert ops.mass.shape == (n, n)
    assert ops.mass_vec.shape == (6 * nf, 6 * nf)


def test_gradient_exact_for_quadratics():
    mesh = grid(3)
    layout = DofLayout.p2(mesh)
    u = f(node_positions(mesh))
    g = (assemble_gradient(mesh, layout).matrix @ u).reshape(mesh.n_faces, 3, 2)
    ambient = mesh.to_ambient(g)
    assert_allclose(ambient, grad_f(mesh.vertices[mesh.faces]), atol=1e-12)


def test_sampling_exact_for_quadratics():
    mesh = grid(2)
    ops = assemble_operators(mesh)
    u = f(node_positions(mesh))
    sample_points = np.einsum("sc,fcd->fsd", SAMPLE_LAMBDAS, mesh.vertices[mesh.faces])
    values = (ops.sampling.q2_bar.matrix @ u).reshape(mesh.n_faces, 7)
    assert_allclose(values, f(sample_points), atol=1e-12)
    grads = (ops.sampling.q_chi_bar.matrix @ (ops.gradient.matrix @ u)).reshape(mesh.n_faces, 7, 2)
    assert_allclose(mesh.to_ambient(grads), grad_f(sample_points), atol=1e-12)


def test_mass_matches_quadrature(square_mesh):
    ops = assemble_operators(square_mesh)
    u = f(node_positions(square_mesh))
    exact = sum(triangle_quadrature(lambda p: f(p) ** 2, square_mesh.vertices[face]) for face in square_mesh.faces)
    assert_allclose(u @ (ops.mass.matrix @ u), exact, rtol=1e-12)


def test_vector_mass_matches_quadrature(square_mesh):
    ops = assemble_operators(square_mesh)
    u = f(node_positions(square_mesh))
    g = ops.gradient.matrix @ u
    # corner samples of a linear gradient interpolate it exactly with P1
    exact = sum(
        triangle_quadrature(lambda p: np.sum(grad_f(p) ** 2, axis=-1), square_mesh.vertices[face])
        for face in square_mesh.faces
    )
    assert_allclose(g @ (ops.mass_vec.matrix @ g), exact, rtol=1e-12)


@pytest.mark.parametrize("mesh", RANDOM_TRIANGLES)
def test_mass_blocks_match_quadrature(mesh):
    lam, w = collapsed_rule()
    area = mesh.face_areas[0]
    ops = assemble_operators(mesh)
    psi = p2_values(lam)
    m2 = area * (psi.T * w) @ psi
    m1 = area * (lam.T * w) @ lam
    assert_allclose(ops.mass_blocks[0], m2, rtol=1e-10, atol=1e-14 * area)
    nodes = ops.layout.face_nodes(mesh)[0]
    assert_allclose(ops.mass.matrix.toarray()[np.ix_(nodes, nodes)], m2, rtol=1e-10, atol=1e-14 * area)
    assert_allclose(assemble_mass_p1(mesh)[0][0], m1, rtol=1e-10, atol=1e-14 * area)
    assert_allclose(ops.mass_vec_blocks[0], np.kron(m1, np.eye(2)), rtol=1e-10, atol=1e-14 * area)


@pytest.mark.parametrize("mesh", RANDOM_TRIANGLES)
def test_gradient_columns_match_finite_differences(mesh):
    layout = DofLayout.p2(mesh)
    g = assemble_gradient(mesh, layout).matrix.toarray()[:, layout.face_nodes(mesh)[0]]
    local = mesh.local_corners[0]
    inverse = affine_inverse(local)
    h = 1e-5
    for corner in range(3):
        for k, e in enumerate(np.eye(2)):
            plus = p2_values(inverse @ np.append(local[corner] + h * e, 1.0))
            minus = p2_values(inverse @ np.append(local[corner] - h * e, 1.0))
            assert_allclose(g[2 * corner + k], (plus - minus) / (2 * h), rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("mesh", RANDOM_TRIANGLES)
def test_dirichlet_energy_matches_quadrature(mesh):
    ops = assemble_operators(mesh)
    u = np.random.default_rng(int(1e6 * mesh.face_areas[0])).normal(size=6)
    nodes = ops.layout.face_nodes(mesh)[0]
    values = np.zeros(ops.layout.total)
    values[nodes] = u
    g = ops.gradient.matrix @ values
    lam, w = collapsed_rule()
    dl = affine_inverse(mesh.local_corners[0])[:, :2]
    grads = np.einsum("j,kjc->kc", u, p2_gradients(lam, dl))
    exact = mesh.face_areas[0] * np.sum(w * np.sum(grads ** 2, axis=1))
    assert_allclose(g @ (ops.mass_vec.matrix @ g), exact, rtol=1e-10)


def test_global_mass_is_positive_definite_on_closed_mesh(ico_mesh):
    mass = assemble_operators(ico_mesh).mass.matrix.toarray()
    assert_allclose(mass, mass.T, atol=1e-15)
    assert np.linalg.eigvalsh(mass).min() > 0.0


def test_p1_mass_integrates_area(ico_mesh):
    _, mass = assemble_mass_p1(ico_mesh)
    ones = np.ones(ico_mesh.n_vertices)
    assert_allclose(ones @ (mass.matrix @ ones), ico_mesh.total_area)


def test_p1_gradient_of_linear_function(square_mesh):
    ops = assemble_operators_p1(square_mesh)
    d = 2.0 * square_mesh.vertices[:, 0] - square_mesh.vertices[:, 1]
    g = (ops.gradient.matrix @ d).reshape(square_mesh.n_faces, 1, 2)
    assert_allclose(square_mesh.to_ambient(g)[:, 0], [[2.0, -1.0, 0.0]] * 2, atol=1e-14)


def test_b2_rows(square_mesh):
    layout = DofLayout.p2(square_mesh)
    b2 = assemble_b2(square_mesh, layout, [source_from_vertex(square_mesh, 2),
                                           source_point(square_mesh, 0, [1 / 3, 1 / 3, 1 / 3])])
    dense = b2.matrix.toarray()
    assert dense.shape == (2, 9)
    assert_allclose(dense[0], np.eye(9)[2])
    assert_allclose(dense[1].sum(), 1.0)
    assert_allclose(dense[1] @ f(node_positions(square_mesh)), f(np.array([1 / 3, 1 / 3])))


def test_interpolate_reproduces_quadratic(ico_mesh):
    layout = DofLayout.p2(ico_mesh)
    positions = node_positions(ico_mesh)
    values = positions[:, 0] ** 2 + positions[:, 1] * positions[:, 2]
    rng = np.random.default_rng(1)
    faces = rng.integers(0, ico_mesh.n_faces, size=10)
    lam = rng.dirichlet(np.ones(3), size=10)
    p = ico_mesh.points(faces, lam)
    assert_allclose(interpolate(values, ico_mesh, layout, faces, lam), p[:, 0] ** 2 + p[:, 1] * p[:, 2], atol=1e-12)


def test_sparse_operator_sums_duplicates_and_dumps(tmp_path):
    op = SparseOperator.from_triplets("T", [0, 0, 1], [1, 1, 0], [1.0, 2.0, 0.5], (2, 2))
    assert_allclose(op.matrix.toarray(), [[0.0, 3.0], [0.5, 0.0]])
    path = tmp_path / "t.txt"
    op.dump(path)
    rows = [line.split() for line in path.read_text().splitlines() if not line.startswith("#")]
    assert [(int(r), int(c), float(v)) for r, c, v in rows] == [(0, 1, 3.0), (1, 0, 0.5)]


def test_operators_on_closed_surface():
    mesh = icosahedron()
    ops = assemble_operators(mesh)
    assert_allclose(ops.integration_weights.sum(), mesh.total_area)
    assert ops.sampling.q2_bar.matrix.nnz == mesh.n_faces * 12
