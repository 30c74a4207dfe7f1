"""File formats: TSV edge lists, CSV matrices, hyperedge lists, binary grids,
and XYZ point clouds.

Parse failures raise :class:`DataError` citing the offending line.  The grid
binary format is: little-endian uint32 ndim, ndim little-endian uint32 dims,
then the row-major payload as little-endian float32.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np


class DataError(Exception):
    """Unreadable or malformed input data."""


def read_edge_tsv(path) -> tuple[int, list[tuple[int, int]]]:
    """Edge list with one ``u<TAB>v`` pair per line; node count is inferred
    as max id + 1."""
    edges = []
    max_id = -1
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer vertex id in {line!r}") from None
            if u < 0 or v < 0:
                raise DataError(f"{path}:{lineno}: negative vertex id in {line!r}")
            edges.append((u, v))
            max_id = max(max_id, u, v)
    return max_id + 1, edges


def read_csv_matrix(path) -> np.ndarray:
    """Comma-separated float matrix, one row per line."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(x) for x in line.split(",")]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(
                    f"{path}:{lineno}: expected {width} columns, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty matrix")
    return np.asarray(rows, dtype=np.float64)


def read_csv_labels(path) -> np.ndarray:
    """One integer label per line (or a single CSV column)."""
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(float(line.split(",")[0])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer label {line!r}") from None
    if not labels:
        raise DataError(f"{path}: empty label file")
    return np.asarray(labels, dtype=np.int64)


def read_hyperedges(path) -> list[set[int]]:
    """One hyperedge per line, space-separated vertex ids."""
    hyperedges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                members = {int(x) for x in line.split()}
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer vertex id") from None
            hyperedges.append(members)
    if not hyperedges:
        raise DataError(f"{path}: empty hyperedge file")
    return hyperedges


def write_grid_bin(path, array: np.ndarray):
    """Write a 2-D image or a 3-D image stack in the binary grid format."""
    array = np.asarray(array, dtype=np.float32)
    if array.ndim not in (2, 3):
        raise ValueError("grid binary format holds 2-D images or 3-D stacks")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.astype("<f4").tobytes())


def read_grid_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read(4)
        if len(raw) < 4:
            raise DataError(f"{path}: truncated header")
        (ndim,) = struct.unpack("<I", raw)
        if ndim not in (2, 3):
            raise DataError(f"{path}: unsupported ndim {ndim}")
        raw = fh.read(4 * ndim)
        if len(raw) < 4 * ndim:
            raise DataError(f"{path}: truncated dims")
        shape = struct.unpack(f"<{ndim}I", raw)
        count = int(np.prod(shape))
        payload = np.frombuffer(fh.read(), dtype="<f4")
        if payload.size != count:
            raise DataError(
                f"{path}: expected {count} float32 values, found {payload.size}"
            )
    return payload.reshape(shape).astype(np.float64)


def read_grid_csv(path) -> np.ndarray:
    """CSV fallback holding a single height x width image."""
    return read_csv_matrix(path)


def read_xyz_csv(path) -> np.ndarray:
    """Point cloud as ``x,y,z`` rows."""
    mat = read_csv_matrix(path)
    if mat.shape[1] != 3:
        raise DataError(f"{path}: expected 3 columns (x,y,z), got {mat.shape[1]}")
    return mat


def load_path(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{p}: file not found")
    return p
