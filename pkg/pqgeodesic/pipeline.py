import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from itertools import product
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import polars as pl

from pqgeodesic.config import Config
from pqgeodesic.data_processor import DataProcessor
from pqgeodesic.data_storage import FORMATS, DataStorage
from pqgeodesic.exceptions import ConfigError, NoSourceError
from pqgeodesic.mesh import TriMesh, add_gaussian_noise, load_mesh, project_to_sphere, subdivide_1to4
from pqgeodesic.metrics import ORACLES, convergence_run, field_delta, l2_error, linf_error
from pqgeodesic.solver import METHODS, DistanceField, solve_field
from pqgeodesic.sources import (
    SourcePoint,
    SourceSet,
    load_sources,
    parse_face_barycentric,
    point_between,
    point_position,
)

logger = logging.getLogger("pqgeodesic")


def split_output(out: Union[str, Path]) -> Tuple[str, str, str]:
    """'dir/name.csv' -> ('dir', 'name', 'csv'), the suffix selects the format"""
    out = Path(out)
    postfix = out.suffix.lstrip(".").lower()
    if postfix not in FORMATS:
        raise ConfigError(f"Unsupported output format '{out.suffix}', expected one of {list(FORMATS)}")
    return str(out.parent), out.stem, postfix


class Pipeline:
    """Runs the distance commands: single solves, convergence studies, noise sweeps and moving sources"""

    def __init__(self, config: Config):
        self.config = config
        self.settings = config.solver_settings()
        self.processor = DataProcessor()
        self.storage = DataStorage(config)

    def load(self, mesh_path: Union[str, Path]) -> TriMesh:
        return load_mesh(mesh_path, eps_area=self.config.eps_area)

    def solve(self, mesh: TriMesh, sources, method: str = "pq") -> DistanceField:
        if method not in METHODS:
            raise ConfigError(f"Unknown method '{method}', expected one of {sorted(METHODS)}")
        return solve_field(mesh, sources, method, self.settings, self.config.tol_neg)

    def write_field(self, field: DistanceField, out: Union[str, Path]) -> str:
        """Writes a solved field, format from the suffix of ``out``"""
        path, name, postfix = split_output(out)
        if postfix == 'json':
            data = self.processor.field_document(field)
        elif postfix == 'ply':
            data = field.on_subdivided()
        else:
            data = self.processor.field_table(field)
        return self.storage.write_file(data, name, path, postfix)

    def write_table(self, table: pl.DataFrame, out: Union[str, Path]) -> str:
        path, name, postfix = split_output(out)
        if postfix == 'ply':
            raise ConfigError("Tables cannot be written as PLY, use .csv, .json or .parquet")
        return self.storage.write_file(table.to_dicts() if postfix == 'json' else table, name, path, postfix)

    def default_output(self, mesh_path: Union[str, Path], suffix: str, postfix: str = "json") -> Path:
        return Path(self.config.out_path) / f"{Path(mesh_path).stem}_{suffix}.{postfix}"

    def run_solve(self, mesh_path: Union[str, Path], sources_path: Union[str, Path], method: str = "pq",
                  out: Optional[Union[str, Path]] = None) -> DistanceField:
        """
        Solves one distance field and writes it

        Args:
            mesh_path: OBJ, OFF or PLY mesh
            sources_path: JSON source specification
            method: 'pq' or 'dfa-pl'
            out: output file, defaults to <out_path>/<mesh>_<method>.json

        Returns:
            DistanceField
        """
        run_start = datetime.now(timezone.utc)
        try:
            mesh = self.load(mesh_path)
            sources = load_sources(sources_path, mesh)
            if sources.is_empty:
                raise NoSourceError(f"{sources_path} defines no sources")
            field = self.solve(mesh, sources, method)
            self.write_field(field, out or self.default_output(mesh_path, method))
            logger.info(f"Solve finished: max d = {field.d.max():.6g}")
            return field
        except Exception as e:
            logger.error(f"Solve failed: {str(e)}")
            raise
        finally:
            logger.info(f"Solve completed in {datetime.now(timezone.utc) - run_start}")

    def run_converge(self, mesh_path: Union[str, Path], levels: Optional[int] = None, oracle: str = "self",
                     source: str = "v:0", methods: Sequence[str] = ("pq", "dfa-pl"),
                     out: Optional[Union[str, Path]] = None) -> pl.DataFrame:
        """Convergence study for every method, one CSV row per method and level"""
        if oracle not in ORACLES:
            raise ConfigError(f"Unknown oracle '{oracle}', expected one of {list(ORACLES)}")
        levels = levels or self.config.default_levels
        run_start = datetime.now(timezone.utc)
        try:
            base = self.load(mesh_path)
            sphere = ((0.0, 0.0, 0.0), 1.0)
            if oracle == "sphere":
                center = base.vertices.mean(axis=0)
                radius = float(np.linalg.norm(base.vertices - center, axis=1).mean())
                sphere = (center, radius)
                base = project_to_sphere(base, center, radius)
            point = parse_face_barycentric(source, base)
            reports = []
            for method in methods:
                reports.extend(convergence_run(
                    base, point, levels, method, oracle, self.settings, self.config.tol_neg,
                    sphere=sphere, max_workers=self.config.max_workers,
                ))
            table = self.processor.report_table(reports)
            target = Path(out) if out else self.default_output(mesh_path, f"converge_{oracle}", "csv")
            self.write_table(table, target)
            return table
        except Exception as e:
            logger.error(f"Convergence run failed: {str(e)}")
            raise
        finally:
            logger.info(f"Convergence run completed in {datetime.now(timezone.utc) - run_start}")

    def run_noise(self, mesh_path: Union[str, Path], sources_path: Union[str, Path], sigmas: Sequence[float],
                  seeds: Sequence[int], method: str = "pq",
                  out: Optional[Union[str, Path]] = None) -> pl.DataFrame:
        """
        Solves on vertex-perturbed copies of a mesh and compares with the clean solve

        sigma is a length in mesh units, applied to every coordinate. Errors are
        nodal differences measured on the clean geometry (the once-subdivided
        mesh for P2 fields, whose vertices are the P2 nodes).
        """
        run_start = datetime.now(timezone.utc)
        try:
            mesh = self.load(mesh_path)
            # sources are resolved once, noise moves vertices but keeps faces
            points = load_sources(sources_path, mesh).resolve(mesh)
            clean = self.solve(mesh, points, method)
            measure = subdivide_1to4(mesh)[0] if clean.layout.degree == 2 else mesh

            def run_case(case: Tuple[float, int]) -> dict:
                sigma, seed = case
                noisy = self.solve(add_gaussian_noise(mesh, sigma, seed), points, method)
                e = noisy.d - clean.d
                return {"sigma": float(sigma), "seed": int(seed), "l2": l2_error(e, measure),
                        "linf": linf_error(e, measure), "wall_time_s": noisy.wall_time_s}

            with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
                rows = list(executor.map(run_case, product(sigmas, seeds)))

            table = self.processor.noise_table(rows)
            summary = self.processor.noise_summary(table)
            target = Path(out) if out else self.default_output(mesh_path, f"noise_{method}", "csv")
            self.write_table(table, target)
            self.write_table(summary, target.with_name(f"{target.stem}_summary{target.suffix}"))
            return table
        except Exception as e:
            logger.error(f"Noise sweep failed: {str(e)}")
            raise
        finally:
            logger.info(f"Noise sweep completed in {datetime.now(timezone.utc) - run_start}")

    def run_movesource(self, mesh_path: Union[str, Path], start: str, end: str, frames: int = 10,
                       method: str = "pq", out: Optional[Union[str, Path]] = None,
                       fields_format: Optional[str] = "json") -> pl.DataFrame:
        """
        Moves a single source along the straight path start -> end in ``frames`` steps

        Frame 0 sits at ``start``; with more than one frame the last one sits at
        ``end``. Every frame is an independent solve; per-frame fields are
        written next to the frame table unless ``fields_format`` is None.

        ``continuity_ok`` marks frames whose max nodal change stays within the
        source step plus twice the tolerated per-field error
        (``continuity_tol`` times the bbox diagonal).
        """
        if frames < 1:
            raise ConfigError(f"frames must be at least 1, got {frames}")
        run_start = datetime.now(timezone.utc)
        try:
            mesh = self.load(mesh_path)
            a = parse_face_barycentric(start, mesh)
            b = parse_face_barycentric(end, mesh)
            ts = np.linspace(0.0, 1.0, frames) if frames > 1 else np.zeros(1)
            points: List[SourcePoint] = [point_between(mesh, a, b, float(t)) for t in ts]

            with ThreadPoolExecutor(max_workers=self.config.max_workers) as executor:
                fields = list(executor.map(lambda p: self.solve(mesh, SourceSet(points=[p]), method), points))

            target = Path(out) if out else self.default_output(mesh_path, f"movesource_{method}", "csv")
            path, name, postfix = split_output(target)
            allowance = 2.0 * self.config.continuity_tol * mesh.bbox_diagonal
            rows = []
            for i, (point, field) in enumerate(zip(points, fields)):
                # straight-line step, the geodesic step on a flat path
                step = 0.0 if i == 0 else float(np.linalg.norm(
                    point_position(mesh, point) - point_position(mesh, points[i - 1])))
                delta = 0.0 if i == 0 else field_delta(field.d, fields[i - 1].d)
                rows.append({"frame": i, "t": float(ts[i]), "face": point.face,
                             "l0": float(point.lam[0]), "l1": float(point.lam[1]), "l2": float(point.lam[2]),
                             "step": step, "max_delta": delta, "continuity_ok": delta <= step + allowance,
                             "wall_time_s": field.wall_time_s})
                if fields_format:
                    self.write_field(field, Path(path) / f"{name}_frame{i:03d}.{fields_format}")

            table = self.processor.frame_table(rows)
            violations = table.height - int(table["continuity_ok"].sum())
            if violations:
                logger.warning(f"{violations} of {table.height} frames changed by more than step + {allowance:.3e}")
            self.write_table(table, target)
            return table
        except Exception as e:
            logger.error(f"Moving source run failed: {str(e)}")
            raise
        finally:
            logger.info(f"Moving source run completed in {datetime.now(timezone.utc) - run_start}")
