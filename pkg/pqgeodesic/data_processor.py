import logging
from typing import List, Sequence

import numpy as np
import polars as pl

from pqgeodesic.metrics import ErrorReport, loglog_slope
from pqgeodesic.solver import DistanceField

logger = logging.getLogger("pqgeodesic")

REPORT_COLUMNS = ["method", "level", "h_mean", "l2", "linf", "rmse", "wall_time_s",
                  "n_nodes", "n_fine_vertices", "reference"]


class DataProcessor:
    """Turns solved fields and error reports into output tables"""

    @staticmethod
    def field_table(field: DistanceField) -> pl.DataFrame:
        """One row per node: node, kind, u, d"""
        return pl.DataFrame({
            "node": np.arange(field.layout.total),
            "kind": field.layout.node_kinds(),
            "u": field.u,
            "d": field.d,
        })

    @staticmethod
    def field_document(field: DistanceField) -> dict:
        """JSON body of a solved field"""
        return {
            "method": field.method,
            "status": field.status.value,
            "layout": field.layout.as_dict(),
            "u": field.u.tolist(),
            "d": field.d.tolist(),
            "diagnostics": field.diagnostics,
            "wall_time_s": field.wall_time_s,
        }

    @staticmethod
    def report_table(reports: Sequence[ErrorReport]) -> pl.DataFrame:
        """Convergence rows with the fitted rmse slope per method"""
        if not reports:
            logger.warning("No convergence reports to tabulate")
            return pl.DataFrame(schema=REPORT_COLUMNS + ["slope"])
        table = pl.DataFrame([r.to_row() for r in reports]).select(REPORT_COLUMNS)
        methods = list(dict.fromkeys(r.method for r in reports))
        slopes = pl.DataFrame({
            "method": methods,
            "slope": [loglog_slope([r for r in reports if r.method == m]) for m in methods],
        })
        return table.join(slopes, on="method", how="left")

    @staticmethod
    def noise_table(rows: List[dict]) -> pl.DataFrame:
        """Rows of (sigma, seed, l2, linf), sorted by sigma then seed"""
        return pl.DataFrame(rows).sort(["sigma", "seed"])

    @staticmethod
    def noise_summary(noise: pl.DataFrame) -> pl.DataFrame:
        """Median and spread of the errors per sigma"""
        return (
            noise.lazy()
            .group_by("sigma")
            .agg(
                pl.col("l2").median().alias("l2_median"),
                pl.col("l2").quantile(0.25).alias("l2_q25"),
                pl.col("l2").quantile(0.75).alias("l2_q75"),
                pl.col("linf").median().alias("linf_median"),
                pl.len().alias("n_seeds"),
            )
            .sort("sigma")
            .collect()
        )

    @staticmethod
    def frame_table(rows: List[dict]) -> pl.DataFrame:
        """Move-source frames: frame, face, lambda, step length, max change to the previous frame and the continuity flag"""
        return pl.DataFrame(rows).sort("frame")
