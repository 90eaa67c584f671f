import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import polars as pl
import trimesh

from pqgeodesic.exceptions import ParseError
from pqgeodesic.mesh import TriMesh

logger = logging.getLogger("pqgeodesic")

FORMATS = ("json", "csv", "parquet", "ply")

PLY_SCALAR = "quality"


class DataStorage:
    """Handles result file output"""

    def __init__(self, config):
        self.config = config

    def write_file(
        self,
        data: Union[List, Dict, pl.DataFrame, Tuple[TriMesh, np.ndarray]],
        filename: str,
        path: str,
        postfix: str
    ) -> str:
        """
        Writes data to the file system

        Args:
            data: dict/list for json, DataFrame (or rows) for csv and parquet,
                  (mesh, per-vertex values) for ply
            filename: file name without suffix
            path: target directory, created when missing
            postfix: one of json, csv, parquet, ply

        Returns:
            str: the written path
        """
        os.makedirs(path, exist_ok=True)
        full_path = f"{path}/{filename}.{postfix}"

        try:
            if postfix == 'json':
                with open(full_path, 'w') as f:
                    json.dump(data, f)
            elif postfix in ('csv', 'parquet'):
                if not isinstance(data, pl.DataFrame):
                    if isinstance(data, list) or isinstance(data, dict):
                        data = pl.DataFrame(data)
                    else:
                        raise ValueError(f"Data must be DataFrame, List, or Dict for {postfix} format")
                if postfix == 'csv':
                    data.write_csv(full_path)
                else:
                    data.write_parquet(full_path, compression="snappy")
            elif postfix == 'ply':
                mesh, values = data
                write_ply_quality(full_path, mesh, values)
            else:
                raise ValueError(f"Unsupported format: {postfix}")

            logger.info(f"Data saved to {full_path}")
            return full_path
        except Exception as e:
            logger.error(f"Failed to write file {full_path}: {str(e)}")
            raise


def write_ply_quality(path: Union[str, Path], mesh: TriMesh, values: np.ndarray) -> None:
    """Binary PLY with one float64 'quality' property per vertex"""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (mesh.n_vertices,):
        raise ValueError(f"Expected {mesh.n_vertices} vertex values, got shape {values.shape}")
    out = trimesh.Trimesh(
        vertices=np.array(mesh.vertices),
        faces=np.array(mesh.faces),
        vertex_attributes={PLY_SCALAR: values},
        process=False,
    )
    blob = trimesh.exchange.ply.export_ply(out, encoding="binary", include_attributes=True)
    with open(path, "wb") as f:
        f.write(blob)


def read_ply_quality(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Reads a PLY written by write_ply_quality

    Returns:
        (vertices, faces, quality)
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"PLY file {path} does not exist")
    try:
        loaded = trimesh.load(str(path), file_type="ply", process=False, force="mesh")
    except Exception as e:
        raise ParseError(f"Failed to parse {path}: {e}") from e
    quality = loaded.vertex_attributes.get(PLY_SCALAR)
    if quality is None:
        raw = loaded.metadata.get("_ply_raw", {}).get("vertex", {}).get("data")
        if isinstance(raw, dict):
            quality = raw.get(PLY_SCALAR)
        elif raw is not None and PLY_SCALAR in (raw.dtype.names or ()):
            quality = raw[PLY_SCALAR]
    if quality is None:
        raise ParseError(f"{path} has no per-vertex '{PLY_SCALAR}' property")
    return np.asarray(loaded.vertices), np.asarray(loaded.faces), np.asarray(quality, dtype=np.float64).ravel()
