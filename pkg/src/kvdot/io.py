"""File formats: legacy ASCII VTK, CSV tables and fields, PGM heatmaps, config files."""
from __future__ import annotations

import contextlib
import csv
import os
from pathlib import Path

import numpy as np

from kvdot.errors import ConfigurationError
from kvdot.mesh import TriMesh

VTK_TRIANGLE = 5


@contextlib.contextmanager
def _atomic_write(path, mode="w"):
    """Write to ``path`` via a temporary file; nothing is left behind on failure."""
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    try:
        with open(tmp, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise OSError(f"could not write {path}: {exc}") from exc
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def write_vtk(path, mesh: TriMesh, fields: dict | None = None, title: str = "kvdot field"):
    """Write the mesh and any nodal scalar ``fields`` as an unstructured grid."""
    fields = fields or {}
    with _atomic_write(path) as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_nodes} double\n")
        # repr of a Python float round-trips exactly
        for x, y in mesh.nodes.tolist():
            fh.write(f"{x!r} {y!r} 0.0\n")
        fh.write(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {mesh.n_triangles}\n")
        fh.write(f"{VTK_TRIANGLE}\n" * mesh.n_triangles)
        if fields:
            fh.write(f"POINT_DATA {mesh.n_nodes}\n")
            for name, values in fields.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (mesh.n_nodes,):
                    raise ConfigurationError(f"field {name!r} has wrong length")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{v!r}\n" for v in values.tolist())


def read_vtk(path):
    """Read back a file written by :func:`write_vtk`.

    Returns ``(points, cells, fields)`` with ``points`` of shape (n, 3).
    """
    tokens = Path(path).read_text().split("\n")
    lines = iter(tokens)
    points, cells, fields = None, None, {}
    n_points = 0
    for line in lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "POINTS":
            n_points = int(parts[1])
            points = np.array([[float(t) for t in next(lines).split()] for _ in range(n_points)])
        elif parts[0] == "CELLS":
            n = int(parts[1])
            cells = np.array([[int(t) for t in next(lines).split()[1:]] for _ in range(n)])
        elif parts[0] == "SCALARS":
            name = parts[1]
            next(lines)  # LOOKUP_TABLE
            fields[name] = np.array([float(next(lines)) for _ in range(n_points)])
    return points, cells, fields


def write_field_csv(path, mesh: TriMesh, values):
    values = np.asarray(values, dtype=float)
    with _atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", "x1", "x2", "value"])
        for k, ((x, y), v) in enumerate(zip(mesh.nodes, values)):
            w.writerow([k, f"{x:.12e}", f"{y:.12e}", f"{v:.12e}"])


def read_field_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["value"]) for r in rows])


def write_table(path, reports, columns=("tau", "delta", "E_qa", "E_N", "E_M", "E_D")):
    """One row per error report; floats in scientific notation, 10 digits."""
    with _atomic_write(path) as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for rep in reports:
            row = []
            for c in columns:
                v = getattr(rep, c)
                row.append(str(v) if isinstance(v, (int, np.integer)) else f"{float(v):.10e}")
            w.writerow(row)


def write_pgm(path, mesh: TriMesh, values, lo=None, hi=None):
    """Grayscale heatmap of nodal values, one pixel per node, top row first."""
    v = np.asarray(values, dtype=float).reshape(mesh.tau + 1, mesh.tau + 1)[::-1]
    lo = v.min() if lo is None else lo
    hi = v.max() if hi is None else hi
    scaled = np.zeros_like(v) if hi <= lo else (np.clip(v, lo, hi) - lo) / (hi - lo)
    pixels = np.round(255 * scaled).astype(np.uint8)
    with _atomic_write(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())


def read_config(path) -> dict:
    """Parse a ``key = value`` config file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out
