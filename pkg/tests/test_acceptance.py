"""End-to-end properties on small meshes, deselect with -m 'not slow'"""

import json

import numpy as np
import pytest
import trimesh

from pqgeodesic.config import Config
from pqgeodesic.mesh import TriMesh, build_hierarchy, subdivide_1to4
from pqgeodesic.metrics import convergence_run, loglog_slope, rmse
from pqgeodesic.pipeline import Pipeline
from pqgeodesic.solver import SolveStatus, dfa_field, geodesic_field
from pqgeodesic.sources import point_position, source_from_vertex, source_point
from tests.conftest import book, fan, grid, icosahedron, l_shape, right_triangle, sliver_square, unit_square

pytestmark = [pytest.mark.slow, pytest.mark.solver]


def write_obj(path, mesh: TriMesh):
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    path.write_text("\n".join(lines) + "\n")
    return path


def from_trimesh(mesh: trimesh.Trimesh) -> TriMesh:
    return TriMesh.from_arrays(mesh.vertices, mesh.faces)


def p2_nodes(mesh: TriMesh) -> np.ndarray:
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    return np.vstack([mesh.vertices, midpoints])


# relative to bbox diagonal squared; vertex and edge sources land within
# about 3e-5 of |x - b|^2, a source inside a sliver within about 1e-2
@pytest.mark.parametrize("point, tol", [
    ((0, [0.0, 0.0, 1.0]), 1e-4),
    ((0, [0.5, 0.5, 0.0]), 1e-4),
    ((2, [0.2, 0.3, 0.5]), 2e-2),
])
def test_flat_squared_distance_on_slivers(point, tol):
    mesh = sliver_square()
    source = source_point(mesh, *point)
    field = geodesic_field(mesh, [source])
    exact = np.sum((p2_nodes(mesh) - point_position(mesh, source)) ** 2, axis=1)
    assert np.abs(field.u - exact).max() <= tol * mesh.bbox_diagonal ** 2


def test_sphere_convergence():
    ico = icosahedron()
    source = source_from_vertex(ico, 0)
    pq = convergence_run(ico, source, levels=3, method="pq", oracle="sphere")
    pl = convergence_run(ico, source, levels=3, method="dfa-pl", oracle="sphere")
    errors = [r.rmse for r in pq]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert loglog_slope(pq) >= 1.0
    assert [r.n_nodes for r in pq] == [r.n_nodes for r in pl]


def test_pq_beats_pl_at_equal_node_count():
    mesh = l_shape()
    source = source_from_vertex(mesh, 2)
    pq = convergence_run(mesh, source, levels=3, method="pq", oracle="self")
    pl = convergence_run(mesh, source, levels=3, method="dfa-pl", oracle="self")
    assert pq[0].n_nodes == pl[0].n_nodes
    assert pq[0].rmse < pl[0].rmse


def relative_gap(mesh, vertex):
    source = source_from_vertex(mesh, vertex)
    d_pq = geodesic_field(mesh, [source]).d[:mesh.n_vertices]
    d_pl = dfa_field(mesh, [source]).d
    return rmse(d_pq - d_pl, mesh) / rmse(d_pq, mesh)


def test_pq_and_pl_agree_on_refined_l_shape():
    fine = build_hierarchy(l_shape(), 3).meshes[3]
    assert relative_gap(fine, 2) <= 0.02


def test_pq_and_pl_agree_under_refinement():
    hierarchy = build_hierarchy(unit_square(), 3)
    coarse, fine = relative_gap(hierarchy.meshes[2], 0), relative_gap(hierarchy.meshes[3], 0)
    assert fine < coarse
    assert fine <= 0.1


def test_moving_source_across_edges(env):
    mesh = grid(2)
    path = write_obj(env / "grid.obj", mesh)
    config = Config.from_env()
    table = Pipeline(config).run_movesource(
        path, "0:0.2,0.2,0.6", "3:0.6,0.2,0.2", frames=8, out=env / "frames.csv", fields_format=None)
    assert table.height == 8
    assert table["face"].n_unique() > 1
    assert table["continuity_ok"].all()
    # each field is within continuity_tol * diagonal of the exact distance
    allowance = 2 * config.continuity_tol * mesh.bbox_diagonal
    for step, delta in zip(table["step"].to_list(), table["max_delta"].to_list()):
        assert delta <= step + allowance


def test_noise_trend(env):
    mesh_path = write_obj(env / "grid.obj", grid(3, size=1 / np.sqrt(2)))
    sources = env / "sources.json"
    sources.write_text(json.dumps([{"vertex": 0}]))
    pipeline = Pipeline(Config.from_env())
    table = pipeline.run_noise(mesh_path, sources, [0.0, 0.004, 0.008], list(range(5)), out=env / "noise.csv")
    summary = pipeline.processor.noise_summary(table)
    medians = summary["l2_median"].to_list()
    assert medians[0] == 0.0
    assert all(b >= a for a, b in zip(medians, medians[1:]))


def sweep_meshes():
    lifted = fan(6)
    lifted = lifted.with_vertices(lifted.vertices + np.array([[0.0, 0.0, 0.5]] + [[0.0, 0.0, 0.0]] * 6))
    stretched = grid(3)
    stretched = stretched.with_vertices(stretched.vertices * np.array([10.0, 1.0, 1.0]))
    return {
        "triangle": right_triangle(),
        "square": unit_square(),
        "icosahedron": icosahedron(),
        "grid1": grid(1),
        "grid2": grid(2),
        "grid3": grid(3),
        "grid4": grid(4),
        "l_shape": l_shape(),
        "l_shape_fine": subdivide_1to4(l_shape())[0],
        "fan5": fan(5),
        "fan6": fan(6),
        "fan8": fan(8),
        "lifted_fan": lifted,
        "stretched": stretched,
        "sliver": sliver_square(),
        "book": book(),
        "box": from_trimesh(trimesh.creation.box()),
        "icosphere": from_trimesh(trimesh.creation.icosphere(subdivisions=1)),
        "cylinder": from_trimesh(trimesh.creation.cylinder(radius=1.0, height=2.0, sections=8)),
        "cone": from_trimesh(trimesh.creation.cone(radius=1.0, height=1.5, sections=8)),
    }


@pytest.mark.parametrize("name", sorted(sweep_meshes()))
def test_feasibility_sweep(name):
    mesh = sweep_meshes()[name]
    vertex = int(mesh.faces[0, 0])
    field = geodesic_field(mesh, [source_from_vertex(mesh, vertex)])
    assert field.status == SolveStatus.OPTIMAL
    assert field.u.min() >= -1e-7 * mesh.bbox_diagonal ** 2
    assert field.u[vertex] <= 1e-6 * mesh.bbox_diagonal ** 2
