"""
Source sets: points anywhere on the surface (a face plus barycentric
coordinates) and polyline curves that are sampled into points.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import jsonschema
import numpy as np

from pqgeodesic.exceptions import (
    BadBarycentricError,
    EmptyCurveError,
    FaceIndexError,
    IsolatedVertexError,
    SourceSpecError,
)
from pqgeodesic.mesh import SubdivisionMap, TriMesh

logger = logging.getLogger("pqgeodesic")

AUTO = "auto"
ZERO_LAMBDA = 1e-12

_POINT_ITEMS = [
    {
        "type": "object",
        "required": ["vertex"],
        "properties": {"vertex": {"type": "integer", "minimum": 0}},
        "additionalProperties": False,
    },
    {
        "type": "object",
        "required": ["face", "lambda"],
        "properties": {
            "face": {"type": "integer", "minimum": 0},
            "lambda": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
        },
        "additionalProperties": False,
    },
]

SOURCE_SCHEMA = {
    "type": "array",
    "minItems": 1,
    "items": {
        "oneOf": _POINT_ITEMS + [
            {
                "type": "object",
                "required": ["curve"],
                "properties": {
                    "curve": {"type": "array", "items": {"oneOf": _POINT_ITEMS}},
                    "closed": {"type": "boolean"},
                    "spacing": {
                        "oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": AUTO}]
                    },
                },
                "additionalProperties": False,
            }
        ]
    },
}


@dataclass(frozen=True, eq=False)
class SourcePoint:
    """A point on the surface: face index plus barycentric coordinates in that face"""
    face: int
    lam: np.ndarray

    def as_dict(self) -> dict:
        return {"face": int(self.face), "lambda": [float(x) for x in self.lam]}

    def key(self) -> Tuple:
        return (int(self.face),) + tuple(np.round(self.lam, 12))


@dataclass(frozen=True, eq=False)
class CurveSource:
    """Polyline through on-surface waypoints, optionally closed"""
    waypoints: Tuple[SourcePoint, ...]
    closed: bool = False
    spacing: Union[float, str] = AUTO


@dataclass(eq=False)
class SourceSet:
    """Zero-set specification: explicit points plus curves still to be sampled"""
    points: List[SourcePoint] = field(default_factory=list)
    curves: List[CurveSource] = field(default_factory=list)

    def resolve(self, mesh: TriMesh) -> List[SourcePoint]:
        """All points, curves sampled, canonicalized and without duplicates"""
        resolved = list(self.points)
        for curve in self.curves:
            resolved.extend(sample_curve(mesh, curve, curve.spacing))
        return unique_points(mesh, resolved)

    @property
    def is_empty(self) -> bool:
        return not self.points and not self.curves

    def only_vertices(self) -> bool:
        return not self.curves and all(vertex_of(None, p) is not None for p in self.points)


def source_point(mesh: TriMesh, face: int, lam) -> SourcePoint:
    """Validated SourcePoint; tiny negative components are clamped to zero"""
    if not 0 <= int(face) < mesh.n_faces:
        raise FaceIndexError(f"Face index {face} out of range (mesh has {mesh.n_faces} faces)")
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (3,) or not np.all(np.isfinite(lam)):
        raise BadBarycentricError(f"Invalid barycentric coordinates {lam}")
    if np.any(lam < -ZERO_LAMBDA) or abs(lam.sum() - 1.0) > 1e-9:
        raise BadBarycentricError(f"Barycentric coordinates {lam.tolist()} are not a convex combination")
    lam = np.clip(lam, 0.0, None)
    lam = lam / lam.sum()
    lam.setflags(write=False)
    return SourcePoint(face=int(face), lam=lam)


def source_from_vertex(mesh: TriMesh, v: int) -> SourcePoint:
    """Source at vertex v, placed in its lowest-index incident face"""
    if not 0 <= v < mesh.n_vertices:
        raise SourceSpecError(f"Vertex index {v} out of range (mesh has {mesh.n_vertices} vertices)")
    faces = mesh.incident_faces(v)
    if len(faces) == 0:
        raise IsolatedVertexError(f"Vertex {v} has no incident face")
    face = int(faces[0])
    lam = (mesh.faces[face] == v).astype(np.float64)
    return source_point(mesh, face, lam)


def vertex_of(mesh: Optional[TriMesh], point: SourcePoint) -> Optional[int]:
    """Vertex index when the point sits on a vertex, else None (index needs the mesh)"""
    hits = np.flatnonzero(point.lam > 1.0 - ZERO_LAMBDA)
    if len(hits) != 1:
        return None
    if mesh is None:
        return int(hits[0])
    return int(mesh.faces[point.face, hits[0]])


def canonical_point(mesh: TriMesh, point: SourcePoint) -> SourcePoint:
    """Moves vertex and edge points to the lowest-index face containing them"""
    point = source_point(mesh, point.face, point.lam)
    nonzero = np.flatnonzero(point.lam > ZERO_LAMBDA)
    corners = mesh.faces[point.face]
    if len(nonzero) == 1:
        return source_from_vertex(mesh, int(corners[nonzero[0]]))
    if len(nonzero) == 2:
        a, b = corners[nonzero]
        face = int(mesh.edge_faces(mesh.edge_index(int(a), int(b)))[0])
        if face == point.face:
            return point
        lam = np.zeros(3)
        target = mesh.faces[face]
        lam[target == a] = point.lam[nonzero[0]]
        lam[target == b] = point.lam[nonzero[1]]
        return source_point(mesh, face, lam)
    return point


def unique_points(mesh: TriMesh, points: Sequence[SourcePoint]) -> List[SourcePoint]:
    seen, result = set(), []
    for point in points:
        point = canonical_point(mesh, point)
        if point.key() in seen:
            continue
        seen.add(point.key())
        result.append(point)
    return result


def point_position(mesh: TriMesh, point: SourcePoint) -> np.ndarray:
    return point.lam @ mesh.vertices[mesh.faces[point.face]]


def locate_point(mesh: TriMesh, position, faces: Optional[np.ndarray] = None) -> SourcePoint:
    """
    Finds the face closest to an ambient position and its barycentric coordinates

    The position is projected onto every candidate face plane; coordinates
    outside the triangle are clamped, and the face whose clamped point is
    nearest wins (lowest index on ties).
    """
    position = np.asarray(position, dtype=np.float64)
    candidates = np.arange(mesh.n_faces) if faces is None else np.asarray(faces)
    p = mesh.vertices[mesh.faces[candidates]]
    v0, v1, v2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], position - p[:, 0]
    d00 = np.einsum("ij,ij->i", v0, v0)
    d01 = np.einsum("ij,ij->i", v0, v1)
    d11 = np.einsum("ij,ij->i", v1, v1)
    d20 = np.einsum("ij,ij->i", v2, v0)
    d21 = np.einsum("ij,ij->i", v2, v1)
    denom = d00 * d11 - d01 * d01
    b = (d11 * d20 - d01 * d21) / denom
    c = (d00 * d21 - d01 * d20) / denom
    lam = np.clip(np.stack([1.0 - b - c, b, c], axis=1), 0.0, None)
    lam /= lam.sum(axis=1, keepdims=True)
    clamped = np.einsum("nc,ncd->nd", lam, p)
    best = int(np.argmin(np.linalg.norm(clamped - position, axis=1)))
    return source_point(mesh, int(candidates[best]), lam[best])


def point_between(mesh: TriMesh, a: SourcePoint, b: SourcePoint, t: float) -> SourcePoint:
    """Point at parameter t on the straight path a -> b, re-located per face when a and b differ in face"""
    if t <= 0.0:
        return a
    if t >= 1.0:
        return b
    if a.face == b.face:
        return source_point(mesh, a.face, (1.0 - t) * a.lam + t * b.lam)
    position = (1.0 - t) * point_position(mesh, a) + t * point_position(mesh, b)
    return locate_point(mesh, position)


def _shares_vertex(mesh: TriMesh, a: SourcePoint, b: SourcePoint) -> bool:
    return bool(np.intersect1d(mesh.faces[a.face], mesh.faces[b.face]).size)


def auto_spacing(mesh: TriMesh) -> float:
    return 0.5 * mesh.mean_edge_length


def sample_curve(mesh: TriMesh, curve: CurveSource, spacing: Union[float, str, None] = AUTO) -> List[SourcePoint]:
    """
    Samples a polyline at arclength intervals no longer than ``spacing``

    Args:
        mesh: surface the waypoints live on
        curve: the polyline
        spacing: positive length, or 'auto' (half the mean edge length)

    Returns:
        list of SourcePoint, waypoints always included, closing point not repeated
    """
    if not curve.waypoints:
        raise EmptyCurveError("Curve source has no waypoints")
    if spacing is None or spacing == AUTO:
        spacing = auto_spacing(mesh)
    spacing = float(spacing)
    if spacing <= 0:
        raise SourceSpecError(f"Curve spacing must be positive, got {spacing}")

    waypoints = list(curve.waypoints)
    if len(waypoints) == 1:
        return [waypoints[0]]
    segments = list(zip(waypoints[:-1], waypoints[1:]))
    if curve.closed:
        segments.append((waypoints[-1], waypoints[0]))

    samples = [waypoints[0]]
    for index, (a, b) in enumerate(segments):
        if not _shares_vertex(mesh, a, b):
            logger.warning(f"Curve segment {index} joins faces {a.face} and {b.face} that share no vertex")
        length = float(np.linalg.norm(point_position(mesh, b) - point_position(mesh, a)))
        n = max(1, math.ceil(length / spacing - 1e-9))
        last = n - 1 if curve.closed and index == len(segments) - 1 else n
        samples.extend(point_between(mesh, a, b, j / n) for j in range(1, last + 1))
    return samples


def refine_source(point: SourcePoint, lineage: SubdivisionMap) -> SourcePoint:
    """The same surface point expressed in the child face of a 1-to-4 subdivision"""
    children = 4 * point.face + np.arange(4)
    best, best_lam = None, None
    for child in children:
        corners = lineage.face_corner_lambda[child]
        lam = np.linalg.solve(corners.T, point.lam)
        if best is None or lam.min() > best_lam.min():
            best, best_lam = int(child), lam
    lam = np.clip(best_lam, 0.0, None)
    lam = lam / lam.sum()
    lam.setflags(write=False)
    return SourcePoint(face=best, lam=lam)


def refine_sources(points: Sequence[SourcePoint], lineage: Sequence[SubdivisionMap]) -> List[SourcePoint]:
    refined = list(points)
    for step in lineage:
        refined = [refine_source(p, step) for p in refined]
    return refined


def _parse_point(mesh: TriMesh, item: dict) -> SourcePoint:
    if "vertex" in item:
        return source_from_vertex(mesh, int(item["vertex"]))
    return source_point(mesh, int(item["face"]), item["lambda"])


def parse_sources(mesh: TriMesh, spec: list) -> SourceSet:
    """Interprets a decoded source specification after schema validation"""
    try:
        jsonschema.validate(spec, SOURCE_SCHEMA)
    except jsonschema.ValidationError as e:
        raise SourceSpecError(f"Invalid source specification: {e.message}") from e
    sources = SourceSet()
    for item in spec:
        if "curve" in item:
            sources.curves.append(CurveSource(
                waypoints=tuple(_parse_point(mesh, w) for w in item["curve"]),
                closed=bool(item.get("closed", False)),
                spacing=item.get("spacing", AUTO),
            ))
        else:
            sources.points.append(_parse_point(mesh, item))
    return sources


def load_sources(path: Union[str, Path], mesh: TriMesh) -> SourceSet:
    path = Path(path)
    try:
        with open(path) as f:
            spec = json.load(f)
    except FileNotFoundError as e:
        raise SourceSpecError(f"Source file {path} does not exist") from e
    except json.JSONDecodeError as e:
        raise SourceSpecError(f"Source file {path} is not valid JSON: {e}") from e
    sources = parse_sources(mesh, spec)
    logger.info(f"Loaded {len(sources.points)} point and {len(sources.curves)} curve sources from {path.name}")
    return sources


def parse_face_barycentric(text: str, mesh: TriMesh) -> SourcePoint:
    """Parses 'face:l0,l1,l2' (or 'v:index' for a vertex) from the command line"""
    try:
        head, tail = text.split(":", 1)
        if head.strip().lower() in ("v", "vertex"):
            return source_from_vertex(mesh, int(tail))
        lam = [float(x) for x in tail.split(",")]
        return source_point(mesh, int(head), lam)
    except ValueError as e:
        raise SourceSpecError(f"Cannot parse source '{text}', expected 'face:l0,l1,l2'") from e
