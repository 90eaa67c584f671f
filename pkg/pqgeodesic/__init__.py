"""Squared geodesic distances on triangle meshes via quadratic elements and a convex conic program."""

from pqgeodesic.config import Config, SolverSettings
from pqgeodesic.mesh import TriMesh, build_hierarchy, load_mesh, subdivide_1to4
from pqgeodesic.solver import DistanceField, dfa_field, geodesic_field, solve_field
from pqgeodesic.sources import SourcePoint, SourceSet, load_sources, source_from_vertex, source_point

__all__ = [
    "Config",
    "DistanceField",
    "SolverSettings",
    "SourcePoint",
    "SourceSet",
    "TriMesh",
    "build_hierarchy",
    "dfa_field",
    "geodesic_field",
    "load_mesh",
    "load_sources",
    "solve_field",
    "source_from_vertex",
    "source_point",
    "subdivide_1to4",
]
