"""
Conic programs for squared geodesic distance (P2) and the linear distance
baseline (P1), their solution with cvxpy, and the resulting distance fields.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np
from scipy import sparse

from pqgeodesic.config import SolverSettings
from pqgeodesic.exceptions import (
    NegativeFieldError,
    NonVertexSourceError,
    NoSourceError,
    SolverStatusError,
    SolverUnavailableError,
)
from pqgeodesic.fem import (
    DofLayout,
    FemOperators,
    P1Operators,
    assemble_b2,
    assemble_operators,
    assemble_operators_p1,
    interpolate,
)
from pqgeodesic.mesh import TriMesh, normalize_mesh, subdivide_1to4
from pqgeodesic.sources import SourcePoint, SourceSet, unique_points, vertex_of

logger = logging.getLogger("pqgeodesic")

SAMPLES_PER_FACE = 7


class SolveStatus(str, Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


_CVXPY_STATUS = {
    cp.OPTIMAL: SolveStatus.OPTIMAL,
    cp.INFEASIBLE: SolveStatus.INFEASIBLE,
    cp.INFEASIBLE_INACCURATE: SolveStatus.INFEASIBLE,
    cp.UNBOUNDED: SolveStatus.UNBOUNDED,
    cp.UNBOUNDED_INACCURATE: SolveStatus.UNBOUNDED,
    cp.USER_LIMIT: SolveStatus.MAX_ITER,
}


@dataclass(frozen=True, eq=False)
class ConeBlock:
    """
    A batch of m cones over affine maps of the program variables.

    kind 'rotated': 2 * x_j * y_j >= |z_j|^2 with constant y.
    kind 'soc':     x_j >= |z_j|.
    x = x_map @ v + x_shift, and z_j are consecutive groups of z_dim rows of
    z_map @ v + z_shift.
    """
    kind: str
    x_map: sparse.csr_matrix
    x_shift: np.ndarray
    z_map: sparse.csr_matrix
    z_shift: np.ndarray
    z_dim: int
    y: Optional[np.ndarray] = None
    provenance: Optional[np.ndarray] = None  # (m, 2): face, sample point

    @property
    def n_cones(self) -> int:
        return self.x_map.shape[0]

    def legs(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        x = self.x_map @ v + self.x_shift
        z = (self.z_map @ v + self.z_shift).reshape(self.n_cones, self.z_dim)
        return x, z

    def violation(self, v: np.ndarray) -> float:
        x, z = self.legs(v)
        if self.kind == "rotated":
            gap = np.sum(z ** 2, axis=1) - 2.0 * x * self.y
        else:
            gap = np.linalg.norm(z, axis=1) - x
        scale = 1.0 + np.abs(x).max(initial=0.0)
        return float(max(gap.max(initial=0.0), 0.0) / scale)


@dataclass(frozen=True, eq=False)
class ConicProgram:
    """minimize c.v  s.t.  A_eq v = b_eq,  A_ub v <= b_ub,  cone blocks"""
    name: str
    n_vars: int
    objective: np.ndarray
    a_eq: sparse.csr_matrix
    b_eq: np.ndarray
    cones: List[ConeBlock]
    a_ub: Optional[sparse.csr_matrix] = None
    b_ub: Optional[np.ndarray] = None

    def validate(self) -> None:
        if len(self.objective) != self.n_vars:
            raise ValueError(f"Objective has length {len(self.objective)}, expected {self.n_vars}")
        for matrix in [self.a_eq, self.a_ub] + [m for b in self.cones for m in (b.x_map, b.z_map)]:
            if matrix is not None and matrix.shape[1] != self.n_vars:
                raise ValueError(f"Constraint map with {matrix.shape[1]} columns, expected {self.n_vars}")
        for block in self.cones:
            if block.z_map.shape[0] != block.n_cones * block.z_dim:
                raise ValueError("Cone block z map does not match its cone count")

    @property
    def n_cones(self) -> int:
        return sum(b.n_cones for b in self.cones)

    @property
    def n_equalities(self) -> int:
        return self.a_eq.shape[0]

    def with_inequalities(self, rows, rhs) -> "ConicProgram":
        """Copy with extra rows A_ub v <= b_ub appended"""
        rows = sparse.csr_matrix(rows)
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        if self.a_ub is not None:
            rows = sparse.vstack([self.a_ub, rows]).tocsr()
            rhs = np.concatenate([self.b_ub, rhs])
        return replace(self, a_ub=rows, b_ub=rhs)

    def dump(self, path: Union[str, Path]) -> None:
        """Self-describing text dump for differential tests against a modeling tool"""
        def triplets(f, label, matrix):
            coo = matrix.tocoo()
            f.write(f"{label} {matrix.shape[0]} {matrix.shape[1]} {coo.nnz}\n")
            for r, c, v in zip(coo.row, coo.col, coo.data):
                f.write(f"{r} {c} {float(v)!r}\n")

        def vector(f, label, values):
            f.write(f"{label} {len(values)}\n")
            f.writelines(f"{float(v)!r}\n" for v in values)

        with open(path, "w") as f:
            f.write(f"program {self.name}\nn_vars {self.n_vars}\nsense minimize\n")
            vector(f, "objective", self.objective)
            triplets(f, "equalities", self.a_eq)
            vector(f, "equalities_rhs", self.b_eq)
            if self.a_ub is not None:
                triplets(f, "inequalities", self.a_ub)
                vector(f, "inequalities_rhs", self.b_ub)
            for index, block in enumerate(self.cones):
                f.write(f"cone_block {index} kind {block.kind} count {block.n_cones} z_dim {block.z_dim}\n")
                triplets(f, "x_map", block.x_map)
                vector(f, "x_shift", block.x_shift)
                if block.y is not None:
                    vector(f, "y", block.y)
                triplets(f, "z_map", block.z_map)
                vector(f, "z_shift", block.z_shift)
        logger.info(f"Program {self.name} dumped to {path}")


@dataclass(eq=False)
class SolveResult:
    status: SolveStatus
    x: Optional[np.ndarray]
    objective: Optional[float]
    solver: str
    wall_time_s: float
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


def build_pq_program(mesh: TriMesh, layout: DofLayout, operators: FemOperators,
                     sources: Sequence[SourcePoint]) -> ConicProgram:
    """
    Maximize the integral of u subject to u >= |grad u|^2 / 4 at the seven
    sample points of every face and u = 0 at the sources.
    """
    if not sources:
        raise NoSourceError("At least one source point is required")
    nf = mesh.n_faces
    b2 = assemble_b2(mesh, layout, sources)
    sampling = operators.sampling
    gradient_samples = (sampling.q_chi_bar.matrix @ operators.gradient.matrix).tocsr()
    cones = ConeBlock(
        kind="rotated",
        x_map=sampling.q2_bar.matrix,
        x_shift=np.zeros(SAMPLES_PER_FACE * nf),
        y=np.full(SAMPLES_PER_FACE * nf, 2.0),
        z_map=gradient_samples,
        z_shift=np.zeros(2 * SAMPLES_PER_FACE * nf),
        z_dim=2,
        provenance=np.column_stack([
            np.repeat(np.arange(nf), SAMPLES_PER_FACE),
            np.tile(np.arange(SAMPLES_PER_FACE), nf),
        ]),
    )
    program = ConicProgram(
        name="pq",
        n_vars=layout.total,
        objective=-operators.integration_weights,
        a_eq=b2.matrix,
        b_eq=np.zeros(b2.rows),
        cones=[cones],
    )
    program.validate()
    logger.info(f"Built PQ program: {program.n_vars} variables, {program.n_cones} cones, "
                f"{program.n_equalities} equalities")
    return program


def build_pl_program(mesh: TriMesh, layout: DofLayout, operators: P1Operators,
                     sources: Sequence[SourcePoint]) -> ConicProgram:
    """Linear baseline: maximize the integral of d subject to |grad d| <= 1 per face and d = 0 at sources"""
    if not sources:
        raise NoSourceError("At least one source point is required")
    vertices = []
    for point in sources:
        v = vertex_of(mesh, point)
        if v is None:
            raise NonVertexSourceError(
                f"Source in face {point.face} at {point.lam.tolist()} is not a vertex; "
                "piecewise-linear fields cannot vanish inside a face"
            )
        vertices.append(v)
    vertices = sorted(set(vertices))
    a_eq = sparse.csr_matrix(
        (np.ones(len(vertices)), (np.arange(len(vertices)), vertices)), shape=(len(vertices), layout.total)
    )
    nf = mesh.n_faces
    cones = ConeBlock(
        kind="soc",
        x_map=sparse.csr_matrix((nf, layout.total)),
        x_shift=np.ones(nf),
        z_map=operators.gradient.matrix,
        z_shift=np.zeros(2 * nf),
        z_dim=2,
        provenance=np.column_stack([np.arange(nf), np.zeros(nf, dtype=int)]),
    )
    program = ConicProgram(
        name="pl",
        n_vars=layout.total,
        objective=-(operators.mass.matrix @ np.ones(layout.total)),
        a_eq=a_eq,
        b_eq=np.zeros(len(vertices)),
        cones=[cones],
    )
    program.validate()
    logger.info(f"Built PL program: {program.n_vars} variables, {program.n_cones} cones")
    return program


def _row(expr, m: int):
    return cp.reshape(expr, (1, m), order="F")


def _cone_constraint(block: ConeBlock, v: cp.Variable):
    m, k = block.n_cones, block.z_dim
    x = block.x_map @ v + block.x_shift
    z = [block.z_map[c::k] @ v + block.z_shift[c::k] for c in range(k)]
    if block.kind == "rotated":
        # 2xy >= |z|^2  <=>  |(2z, 2x - y)| <= 2x + y
        legs = [_row(2.0 * zc, m) for zc in z] + [_row(2.0 * x - block.y, m)]
        return cp.SOC(2.0 * x + block.y, cp.vstack(legs), axis=0)
    return cp.SOC(x, cp.vstack([_row(zc, m) for zc in z]), axis=0)


def _solver_options(name: str, settings: SolverSettings) -> dict:
    if name == "CLARABEL":
        return {"max_iter": settings.max_iter, "tol_gap_abs": settings.tol,
                "tol_gap_rel": settings.tol, "tol_feas": settings.tol}
    if name == "ECOS":
        return {"max_iters": settings.max_iter, "abstol": settings.tol,
                "reltol": settings.tol, "feastol": settings.tol}
    if name == "SCS":
        return {"max_iters": max(100 * settings.max_iter, 20000), "eps_abs": settings.tol, "eps_rel": settings.tol}
    return {}


def program_diagnostics(program: ConicProgram, v: np.ndarray) -> Dict[str, float]:
    """Primal residuals recomputed from a candidate solution"""
    eq = program.a_eq @ v - program.b_eq
    diagnostics = {
        "eq_residual": float(np.abs(eq).max(initial=0.0) / (1.0 + np.abs(program.b_eq).max(initial=0.0))),
        "cone_violation": max((b.violation(v) for b in program.cones), default=0.0),
        "ineq_violation": 0.0,
    }
    if program.a_ub is not None:
        diagnostics["ineq_violation"] = float(max((program.a_ub @ v - program.b_ub).max(initial=0.0), 0.0))
    return diagnostics


def solve(program: ConicProgram, settings: SolverSettings = SolverSettings()) -> SolveResult:
    """
    Solves a conic program with the first available solver of the chain

    Args:
        program: the program
        settings: tolerance, iteration cap and the ordered solver chain

    Returns:
        SolveResult, non-optimal outcomes are returned with their status, never hidden
    """
    program.validate()
    v = cp.Variable(program.n_vars)
    constraints = []
    if program.a_eq.shape[0]:
        constraints.append(program.a_eq @ v == program.b_eq)
    if program.a_ub is not None and program.a_ub.shape[0]:
        constraints.append(program.a_ub @ v <= program.b_ub)
    constraints.extend(_cone_constraint(block, v) for block in program.cones)
    problem = cp.Problem(cp.Minimize(program.objective @ v), constraints)

    installed = set(cp.installed_solvers())
    for name in settings.solvers:
        if name not in installed:
            logger.warning(f"Solver {name} is not installed, trying the next one")
            continue
        start = time.perf_counter()
        try:
            problem.solve(solver=name, **_solver_options(name, settings))
        except cp.SolverError as e:
            logger.warning(f"Solver {name} failed on program {program.name}: {str(e)}")
            continue
        wall_time = time.perf_counter() - start
        return _result(program, problem, v, name, wall_time, settings)
    raise SolverUnavailableError(f"None of the solvers {list(settings.solvers)} could solve program {program.name}")


def _result(program, problem, v, name, wall_time, settings) -> SolveResult:
    x = None if v.value is None else np.asarray(v.value, dtype=np.float64)
    diagnostics = program_diagnostics(program, x) if x is not None else {}
    if problem.status == cp.OPTIMAL_INACCURATE:
        # primal residuals must meet the requested tolerance itself
        accurate = x is not None and max(diagnostics.values()) <= settings.tol
        status = SolveStatus.OPTIMAL if accurate else SolveStatus.MAX_ITER
        logger.warning(f"Solver {name} reported an inaccurate optimum, residuals {diagnostics}")
    elif problem.status in _CVXPY_STATUS:
        status = _CVXPY_STATUS[problem.status]
    else:
        raise SolverStatusError(problem.status, diagnostics)
    if status != SolveStatus.OPTIMAL:
        x = x if status == SolveStatus.MAX_ITER else None
    objective = float(problem.value) if status == SolveStatus.OPTIMAL else None
    logger.info(f"Program {program.name} solved by {name}: {status.value} in {wall_time:.3f}s")
    return SolveResult(status=status, x=x, objective=objective, solver=name,
                       wall_time_s=wall_time, diagnostics=diagnostics)


@dataclass(eq=False)
class DistanceField:
    """
    Solved nodal field. For P2 fields u is the solved squared distance and
    d = sqrt(u) per node; for P1 fields d is the solved distance and u = d^2.
    """
    mesh: TriMesh
    layout: DofLayout
    u: np.ndarray
    d: np.ndarray
    method: str = "pq"
    status: SolveStatus = SolveStatus.OPTIMAL
    diagnostics: Dict[str, float] = field(default_factory=dict)
    wall_time_s: float = 0.0

    def evaluate_u(self, faces, lambdas) -> np.ndarray:
        return interpolate(self.u if self.layout.degree == 2 else self.d ** 2, self.mesh, self.layout, faces, lambdas)

    def evaluate(self, faces, lambdas) -> np.ndarray:
        """Distance anywhere on the surface: sqrt of the interpolated u (P2) or interpolated d (P1)"""
        if self.layout.degree == 2:
            return np.sqrt(np.clip(interpolate(self.u, self.mesh, self.layout, faces, lambdas), 0.0, None))
        return interpolate(self.d, self.mesh, self.layout, faces, lambdas)

    def on_subdivided(self) -> Tuple[TriMesh, np.ndarray]:
        """Mesh whose vertices are the nodes of this field, with nodal d as vertex values"""
        if self.layout.degree == 1:
            return self.mesh, self.d
        fine, _ = subdivide_1to4(self.mesh)
        return fine, self.d


def extract_distance(values: np.ndarray, mesh: TriMesh, layout: DofLayout, scale: float = 1.0,
                     tol_neg: float = 1e-7, **metadata) -> DistanceField:
    """
    Turns a solved vector computed on the normalized mesh into a distance field on ``mesh``

    Args:
        values: solved u (P2) or d (P1) on the normalized mesh
        mesh: the mesh in original units
        layout: nodal layout the values refer to
        scale: normalization scale, original = scale * normalized
        tol_neg: clamping tolerance relative to the squared bbox diagonal of ``mesh``

    Returns:
        DistanceField
    """
    values = np.asarray(values, dtype=np.float64)
    if len(values) != layout.total:
        raise ValueError(f"Expected {layout.total} nodal values, got {len(values)}")
    limit = tol_neg * mesh.bbox_diagonal ** 2
    if layout.degree == 2:
        u = values * scale ** 2
    else:
        u = np.sign(values) * (values * scale) ** 2
    worst = float(u.min(initial=0.0))
    if worst < -limit:
        raise NegativeFieldError(f"Nodal u reaches {worst:.3e}, below the tolerance -{limit:.3e}")
    u = np.where(u < 0.0, 0.0, u)
    d = np.sqrt(u)
    return DistanceField(mesh=mesh, layout=layout, u=u, d=d, **metadata)


def _resolve(mesh: TriMesh, sources: Union[SourceSet, Sequence[SourcePoint]]) -> List[SourcePoint]:
    if isinstance(sources, SourceSet):
        return sources.resolve(mesh)
    return unique_points(mesh, list(sources))


def _require_optimal(result: SolveResult) -> None:
    if not result.ok:
        logger.error(f"Solver returned {result.status.value}, diagnostics {result.diagnostics}")
        raise SolverStatusError(result.status.value, result.diagnostics)


def geodesic_field(mesh: TriMesh, sources, settings: SolverSettings = SolverSettings(),
                   tol_neg: float = 1e-7) -> DistanceField:
    """Squared-distance P2 solve on the normalized mesh, returned in original units"""
    points = _resolve(mesh, sources)
    normalized, scale = normalize_mesh(mesh)
    layout = DofLayout.p2(normalized)
    operators = assemble_operators(normalized, layout)
    result = solve(build_pq_program(normalized, layout, operators, points), settings)
    _require_optimal(result)
    return extract_distance(result.x, mesh, layout, scale, tol_neg, method="pq", status=result.status,
                            diagnostics=result.diagnostics, wall_time_s=result.wall_time_s)


def dfa_field(mesh: TriMesh, sources, settings: SolverSettings = SolverSettings(),
              tol_neg: float = 1e-7) -> DistanceField:
    """Piecewise-linear baseline solve, vertex sources only"""
    points = _resolve(mesh, sources)
    normalized, scale = normalize_mesh(mesh)
    operators = assemble_operators_p1(normalized)
    result = solve(build_pl_program(normalized, operators.layout, operators, points), settings)
    _require_optimal(result)
    return extract_distance(result.x, mesh, operators.layout, scale, tol_neg, method="dfa-pl",
                            status=result.status, diagnostics=result.diagnostics,
                            wall_time_s=result.wall_time_s)


def sample_slack(mesh: TriMesh, u: np.ndarray, operators: Optional[FemOperators] = None) -> np.ndarray:
    """u(p) - |grad u(p)|^2 / 4 at the seven sample points of every face, shape (F, 7)"""
    operators = operators or assemble_operators(mesh)
    values = operators.sampling.q2_bar.matrix @ u
    grads = (operators.sampling.q_chi_bar.matrix @ (operators.gradient.matrix @ u)).reshape(-1, 2)
    return (values - 0.25 * np.sum(grads ** 2, axis=1)).reshape(mesh.n_faces, SAMPLES_PER_FACE)


METHODS = {"pq": geodesic_field, "dfa-pl": dfa_field}


def solve_field(mesh: TriMesh, sources, method: str = "pq", settings: SolverSettings = SolverSettings(),
                tol_neg: float = 1e-7) -> DistanceField:
    """Dispatches to the PQ solve or the PL baseline by method name"""
    if method not in METHODS:
        raise ValueError(f"Unknown method '{method}', expected one of {sorted(METHODS)}")
    return METHODS[method](mesh, sources, settings, tol_neg)
