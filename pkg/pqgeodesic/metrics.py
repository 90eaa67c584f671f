"""
Error norms, analytic distance oracles, prolongation across subdivision
levels and the convergence harness.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple

import numpy as np

from pqgeodesic.config import SolverSettings
from pqgeodesic.exceptions import ConfigError, DimensionError, MeshLineageError
from pqgeodesic.fem import DofLayout, assemble_mass_p1, interpolate
from pqgeodesic.mesh import SubdivisionMap, TriMesh, build_hierarchy, locate_in_coarse
from pqgeodesic.solver import DistanceField, solve_field
from pqgeodesic.sources import SourcePoint, point_position, refine_sources

logger = logging.getLogger("pqgeodesic")

ORACLES = ("sphere", "flat", "self")

# PQ runs one subdivision level below PL so both carry the same number of nodes
LEVEL_OFFSET = {"pq": 0, "dfa-pl": 1}


@dataclass
class ErrorReport:
    method: str
    level: int
    h_mean: float
    rmse: float
    l2: float
    linf: float
    n_fine_vertices: int
    n_nodes: int
    wall_time_s: float
    reference: str

    def to_row(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_row())


def prolong_nodal(values: np.ndarray, mesh: TriMesh, layout: DofLayout, fine: TriMesh,
                  lineage: Sequence[SubdivisionMap]) -> np.ndarray:
    """
    Interpolates nodal values of ``mesh`` at every vertex of ``fine``

    Args:
        values: nodal values over ``layout``
        mesh: the coarse mesh the values live on
        layout: P2 or P1 layout of ``mesh``
        fine: mesh produced from ``mesh`` by the subdivision steps in ``lineage``
        lineage: subdivision maps ordered from coarse to fine

    Returns:
        one value per fine vertex
    """
    if lineage and (lineage[0].coarse_n_faces != mesh.n_faces or lineage[0].coarse_n_vertices != mesh.n_vertices):
        raise MeshLineageError("Lineage does not start at the mesh the field was solved on")
    if not lineage and fine.n_vertices != mesh.n_vertices:
        raise MeshLineageError("Empty lineage but the meshes differ")
    faces, lambdas = locate_in_coarse(fine, lineage)
    return interpolate(values, mesh, layout, faces, lambdas)


def prolong_field(field: DistanceField, fine: TriMesh, lineage: Sequence[SubdivisionMap]) -> np.ndarray:
    """Distance at the fine vertices: sqrt of the prolonged u for P2 fields, linear d for P1"""
    if field.layout.degree == 2:
        u = prolong_nodal(field.u, field.mesh, field.layout, fine, lineage)
        return np.sqrt(np.clip(u, 0.0, None))
    return prolong_nodal(field.d, field.mesh, field.layout, fine, lineage)


def _check(e: np.ndarray, mesh: TriMesh) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (mesh.n_vertices,):
        raise DimensionError(f"Error vector has shape {e.shape}, mesh has {mesh.n_vertices} vertices")
    return e


def l2_error(e: np.ndarray, mesh: TriMesh) -> float:
    """sqrt(e^T M1 e) with the linear mass matrix of the mesh"""
    e = _check(e, mesh)
    _, mass = assemble_mass_p1(mesh)
    return float(math.sqrt(max(float(e @ (mass.matrix @ e)), 0.0)))


def rmse(e: np.ndarray, mesh: TriMesh) -> float:
    """L2 error relative to the L2 norm of the constant one, i.e. divided by sqrt(area)"""
    return l2_error(e, mesh) / math.sqrt(mesh.total_area)


def linf_error(e: np.ndarray, mesh: TriMesh) -> float:
    return float(np.abs(_check(e, mesh)).max())


def error_report(e: np.ndarray, mesh: TriMesh, method: str, level: int, h_mean: float,
                 n_nodes: int, wall_time_s: float = 0.0, reference: str = "self") -> ErrorReport:
    l2 = l2_error(e, mesh)
    return ErrorReport(
        method=method,
        level=level,
        h_mean=float(h_mean),
        rmse=l2 / math.sqrt(mesh.total_area),
        l2=l2,
        linf=linf_error(e, mesh),
        n_fine_vertices=mesh.n_vertices,
        n_nodes=int(n_nodes),
        wall_time_s=float(wall_time_s),
        reference=reference,
    )


def oracle_flat(source, queries, squared: bool = False) -> np.ndarray:
    """Euclidean distance from one source position to every query position"""
    diff = np.atleast_2d(np.asarray(queries, dtype=float)) - np.asarray(source, dtype=float)
    squared_distance = np.sum(diff ** 2, axis=1)
    return squared_distance if squared else np.sqrt(squared_distance)


def oracle_sphere(source, queries, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Great-circle distance on the sphere (center, radius); inputs are projected radially"""
    center = np.asarray(center, dtype=float)
    a = np.asarray(source, dtype=float) - center
    a = a / np.linalg.norm(a)
    q = np.atleast_2d(np.asarray(queries, dtype=float)) - center
    q = q / np.linalg.norm(q, axis=1)[:, None]
    return radius * np.arccos(np.clip(q @ a, -1.0, 1.0))


def loglog_slope(reports: Sequence[ErrorReport]) -> float:
    """Least-squares slope of log(rmse) against log(h_mean), nan with fewer than two usable rows"""
    usable = [(r.h_mean, r.rmse) for r in reports if r.rmse > 0.0 and r.h_mean > 0.0]
    if len(usable) < 2:
        return float("nan")
    h, err = np.log(np.array(usable)).T
    return float(np.polyfit(h, err, 1)[0])


def convergence_run(base: TriMesh, source: SourcePoint, levels: int = 3, method: str = "pq",
                    oracle: str = "self", settings: SolverSettings = SolverSettings(),
                    tol_neg: float = 1e-7, sphere: Tuple = ((0.0, 0.0, 0.0), 1.0),
                    max_workers: int = 1) -> List[ErrorReport]:
    """
    Solves on successive subdivisions and measures errors on the finest level

    PQ is solved on M0..M(levels-1) and the PL baseline on M1..M(levels), so
    rows with the same index have equal node counts. Every solution is
    prolonged to M(levels) and compared with the reference there.

    Args:
        base: coarsest mesh M0
        source: source point on ``base``
        levels: number of subdivision steps
        method: 'pq' or 'dfa-pl'
        oracle: 'sphere', 'flat', or 'self' (finest-level PQ solve)
        sphere: (center, radius) used for projection and the sphere oracle

    Returns:
        one ErrorReport per solved level, coarse to fine
    """
    if oracle not in ORACLES:
        raise ConfigError(f"Unknown oracle '{oracle}', expected one of {list(ORACLES)}")
    if method not in LEVEL_OFFSET:
        raise ConfigError(f"Unknown method '{method}'")
    center, radius = np.asarray(sphere[0], dtype=float), float(sphere[1])
    # sphere runs project every level back onto the sphere
    hierarchy = build_hierarchy(base, levels, sphere=(center, radius) if oracle == "sphere" else None)
    fine = hierarchy.meshes[levels]
    fine_source = refine_sources([source], hierarchy.lineage)[0]
    reference = _reference(fine, fine_source, oracle, center, radius, settings, tol_neg)

    solved_levels = [k + LEVEL_OFFSET[method] for k in range(levels)]

    def run_level(k: int) -> ErrorReport:
        mesh = hierarchy.meshes[k]
        points = refine_sources([source], hierarchy.lineage[:k])
        field = solve_field(mesh, points, method, settings, tol_neg)
        # interpolation is exact on descendants, errors are measured on the finest level only
        d = prolong_field(field, fine, hierarchy.lineage[k:levels])
        report = error_report(d - reference, fine, method, k, mesh.mean_edge_length, field.layout.total,
                              field.wall_time_s, oracle)
        logger.info(f"{method} level {k}: rmse={report.rmse:.3e}, linf={report.linf:.3e}, "
                    f"nodes={report.n_nodes}")
        return report

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        reports = list(executor.map(run_level, solved_levels))
    logger.info(f"{method} convergence slope against {oracle} reference: {loglog_slope(reports):.3f}")
    return reports


def _reference(fine: TriMesh, source: SourcePoint, oracle: str, center: np.ndarray, radius: float,
               settings: SolverSettings, tol_neg: float) -> np.ndarray:
    if oracle == "flat":
        return oracle_flat(point_position(fine, source), fine.vertices)
    if oracle == "sphere":
        return oracle_sphere(point_position(fine, source), fine.vertices, radius, center)
    field = solve_field(fine, [source], "pq", settings, tol_neg)
    return field.d[:fine.n_vertices]


def field_delta(a: np.ndarray, b: np.ndarray) -> float:
    """Largest nodal difference between two fields on the same mesh"""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"Fields differ in shape: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).max(initial=0.0))

