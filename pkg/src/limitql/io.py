"""File formats: mesh JSON, legacy VTK, conic-program JSON, run summaries.

Every writer goes through :func:`atomic_write`, which writes a temporary
file in the target directory and renames it into place.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from contextlib import contextmanager

import numpy as np
import scipy.sparse as sp

from .mesh import ConformingMesh, MeshError
from .socp import ConeSpec, ConicProgram

MESH_FORMAT = "limitql-mesh"
CONIC_FORMAT = "limitql-conic"
VTK_POLYGON = 7


@contextmanager
def atomic_write(path, mode="w"):
    """Open a temporary sibling of ``path`` and rename it over ``path`` on success."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(obj, path):
    with atomic_write(path) as fh:
        json.dump(obj, fh, indent=2, default=_json_default, allow_nan=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# mesh JSON
# ---------------------------------------------------------------------------

def mesh_to_dict(mesh):
    """Plain-data form of a :class:`ConformingMesh` (exact float round trip)."""
    return {
        "format": MESH_FORMAT,
        "version": 1,
        "nodes": mesh.nodes.tolist(),
        "elements": [np.asarray(e).tolist() for e in mesh.elements],
        "boundary": mesh.boundary_pairs(),
        "cells": None if mesh.cells is None else np.asarray(mesh.cells).tolist(),
    }


def mesh_from_dict(data):
    if data.get("format") != MESH_FORMAT:
        raise MeshError(f"not a {MESH_FORMAT} document")
    tags = {}
    for group, pairs in data.get("boundary", {}).items():
        for a, b in pairs:
            tags[(min(a, b), max(a, b))] = group
    return ConformingMesh.from_polygons(np.asarray(data["nodes"], dtype=float), data["elements"], tags,
                                        cells=data.get("cells"))


def write_mesh_json(mesh, path):
    write_json(mesh_to_dict(mesh), path)


def read_mesh_json(path):
    with open(path) as fh:
        return mesh_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# legacy VTK
# ---------------------------------------------------------------------------

def _vtk_float(v):
    return repr(float(v)) if math.isfinite(v) else "nan"


def _write_polygons_vtk(fh, title, points, polygons, cell_data):
    fh.write("# vtk DataFile Version 3.0\n")
    fh.write(title.replace("\n", " ")[:255] + "\n")
    fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    fh.write(f"POINTS {len(points)} double\n")
    for x, y in points:
        fh.write(f"{_vtk_float(x)} {_vtk_float(y)} 0\n")
    size = sum(len(p) + 1 for p in polygons)
    fh.write(f"CELLS {len(polygons)} {size}\n")
    for p in polygons:
        fh.write(" ".join(str(int(i)) for i in [len(p), *p]) + "\n")
    fh.write(f"CELL_TYPES {len(polygons)}\n")
    for _ in polygons:
        fh.write(f"{VTK_POLYGON}\n")
    if cell_data:
        fh.write(f"CELL_DATA {len(polygons)}\n")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if len(values) != len(polygons):
                raise ValueError(f"cell field '{name}' has {len(values)} values for {len(polygons)} cells")
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            for v in values:
                fh.write(_vtk_float(v) + "\n")


def write_mesh_vtk(mesh, path, cell_data=None):
    """Write the mesh polygons (VTK cell type 7) with optional per-element fields."""
    with atomic_write(path) as fh:
        _write_polygons_vtk(fh, "limitql mesh", mesh.nodes, mesh.elements, cell_data or {})


def smoothing_polygons(mesh):
    """Counter-clockwise outline of every smoothing domain.

    Points are the mesh nodes followed by the element centroids; an interior
    edge ``a -> b`` gives the quadrilateral ``(a, c_right, b, c_left)`` and a
    boundary edge the triangle ``(a, b, c)``.
    """
    cent = np.array([mesh.centroid(e) for e in range(mesh.n_elements)]).reshape(-1, 2)
    points = np.vstack([mesh.nodes, cent])
    base = mesh.n_nodes
    polys = []
    for k in range(mesh.n_edges):
        a, b = (int(v) for v in mesh.edges[k])
        left = right = None
        for e, j in zip(mesh.edge_elements[k], mesh.edge_local[k]):
            if e < 0:
                continue
            # element e runs a -> b along its own boundary iff it lies left of a -> b
            if int(mesh.elements[e][j]) == a:
                left = base + int(e)
            else:
                right = base + int(e)
        if left is not None and right is not None:
            polys.append([a, right, b, left])
        elif left is not None:
            polys.append([a, b, left])
        else:
            polys.append([b, a, right])
    return points, polys


def write_dissipation_vtk(mesh, dissipation, path):
    """One polygon per smoothing domain carrying the dissipation density."""
    dissipation = np.asarray(dissipation, dtype=float)
    if len(dissipation) != mesh.n_edges:
        raise ValueError(f"{len(dissipation)} values for {mesh.n_edges} smoothing domains")
    points, polys = smoothing_polygons(mesh)
    with atomic_write(path) as fh:
        _write_polygons_vtk(fh, "limitql dissipation", points, polys, {"dissipation": dissipation})


def read_vtk_cells(path):
    """Minimal reader for the files written here: ``(points, polygons, cell_fields)``."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    it = iter(tokens)
    points, polys, fields, types = None, [], {}, []
    for line in it:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "POINTS":
            n = int(parts[1])
            points = np.array([[float(v) for v in next(it).split()[:2]] for _ in range(n)])
        elif parts[0] == "CELLS":
            for _ in range(int(parts[1])):
                vals = [int(v) for v in next(it).split()]
                polys.append(vals[1:])
        elif parts[0] == "CELL_TYPES":
            types = [int(next(it)) for _ in range(int(parts[1]))]
        elif parts[0] == "SCALARS":
            next(it)
            fields[parts[1]] = np.array([float(next(it)) for _ in range(len(polys))])
    if types and set(types) != {VTK_POLYGON}:
        raise ValueError("only polygon cells are supported")
    return points, polys, fields


# ---------------------------------------------------------------------------
# conic programs
# ---------------------------------------------------------------------------

def program_to_dict(program):
    A = program.A.tocoo()
    return {
        "format": CONIC_FORMAT,
        "version": 1,
        "c": program.c.tolist(),
        "b": program.b.tolist(),
        "A": {"shape": list(A.shape), "row": A.row.tolist(), "col": A.col.tolist(),
              "val": A.data.tolist()},
        "cones": {"n_free": program.cones.n_free, "quad": list(program.cones.quad_cones)},
    }


def program_from_dict(data):
    if data.get("format") != CONIC_FORMAT:
        raise ValueError(f"not a {CONIC_FORMAT} document")
    a = data["A"]
    A = sp.csr_matrix((np.asarray(a["val"], dtype=float), (np.asarray(a["row"], dtype=int),
                                                          np.asarray(a["col"], dtype=int))),
                      shape=tuple(a["shape"]))
    cones = ConeSpec(int(data["cones"]["n_free"]), tuple(data["cones"]["quad"]))
    return ConicProgram(c=np.asarray(data["c"], dtype=float), A=A, b=np.asarray(data["b"], dtype=float),
                        cones=cones)


def write_program_json(program, path):
    write_json(program_to_dict(program), path)


def read_program_json(path):
    with open(path) as fh:
        return program_from_dict(json.load(fh))
