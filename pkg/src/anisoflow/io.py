"""Field output as legacy VTK structured points, plus a reader for our own files.

Binary files are written big-endian, which is what legacy VTK readers expect.
2D grids are written as a single layer of points with a zero z component.
"""

import json
import os

import numpy as np

from .errors import ConfigurationError
from .material import build_tensors

_HEADER = "# vtk DataFile Version 3.0"


def _vec3(a):
    a = np.asarray(a, dtype=float)
    if a.shape[1] == 3:
        return a
    return np.hstack([a, np.zeros((a.shape[0], 3 - a.shape[1]))])


def _write_array(fh, values, binary, dtype):
    values = np.ascontiguousarray(values)
    if binary:
        fh.write(values.astype(">" + dtype).tobytes())
        fh.write(b"\n")
    else:
        fmt = "%d" if dtype.startswith("i") else "%.17g"
        rows = values.reshape(values.shape[0], -1)
        fh.write(("\n".join(" ".join(fmt % x for x in row) for row in rows) + "\n").encode())


def write_vtk(path, grid, point_vectors=None, point_scalars=None, cell_scalars=None, cell_vectors=None,
              binary=False, title="anisoflow"):
    """Write a STRUCTURED_POINTS file.

    Each of the data arguments is a dict name -> array. Vectors have shape
    (n, dim) and are padded to three components. Integer scalar arrays are
    written as ``int``, everything else as ``double``.
    """
    point_vectors, point_scalars = point_vectors or {}, point_scalars or {}
    cell_scalars, cell_vectors = cell_scalars or {}, cell_vectors or {}
    npa = list(grid.nodes_per_axis) + [1] * (3 - grid.dim)
    title = title.replace("\n", " ")[:255]
    try:
        fh = open(path, "wb")
    except OSError as exc:
        raise ConfigurationError(f"cannot write {path}", [str(exc)]) from exc
    with fh:
        head = [
            _HEADER, title, "BINARY" if binary else "ASCII", "DATASET STRUCTURED_POINTS",
            "DIMENSIONS %d %d %d" % tuple(npa), "ORIGIN 0 0 0", "SPACING %r %r %r" % ((grid.h,) * 3),
        ]
        fh.write(("\n".join(head) + "\n").encode())
        for section, count, vecs, scals in (
            ("POINT_DATA", grid.n_nodes, point_vectors, point_scalars),
            ("CELL_DATA", grid.n_cells, cell_vectors, cell_scalars),
        ):
            if not vecs and not scals:
                continue
            fh.write(f"{section} {count}\n".encode())
            for name, arr in vecs.items():
                arr = _vec3(np.asarray(arr).reshape(count, -1))
                fh.write(f"VECTORS {name} double\n".encode())
                _write_array(fh, arr, binary, "f8")
            for name, arr in scals.items():
                arr = np.asarray(arr).reshape(count)
                dtype = "i4" if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool else "f8"
                kind = "int" if dtype == "i4" else "double"
                fh.write(f"SCALARS {name} {kind} 1\nLOOKUP_TABLE default\n".encode())
                _write_array(fh, arr.astype(dtype), binary, dtype)


def read_vtk(path):
    """Parse a file written by :func:`write_vtk`; returns a dict of arrays and header info."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def line():
        nonlocal pos
        end = data.index(b"\n", pos)
        s = data[pos:end].decode()
        pos = end + 1
        return s

    out = {"header": line(), "title": line()}
    binary = line().strip() == "BINARY"
    out["binary"] = binary
    line()  # DATASET
    out["dimensions"] = tuple(int(x) for x in line().split()[1:])
    out["origin"] = tuple(float(x) for x in line().split()[1:])
    out["spacing"] = tuple(float(x) for x in line().split()[1:])
    out["point_data"], out["cell_data"] = {}, {}
    count, target = 0, None

    def values(n, dtype):
        nonlocal pos
        if binary:
            size = np.dtype(dtype).itemsize * n
            arr = np.frombuffer(data[pos : pos + size], dtype=">" + dtype).astype(dtype)
            pos += size + 1
            return arr
        vals = []
        while len(vals) < n:
            vals.extend(line().split())
        return np.array(vals, dtype=float).astype(dtype)

    while pos < len(data):
        s = line().strip()
        if not s:
            continue
        parts = s.split()
        if parts[0] in ("POINT_DATA", "CELL_DATA"):
            count = int(parts[1])
            target = out["point_data" if parts[0] == "POINT_DATA" else "cell_data"]
        elif parts[0] == "VECTORS":
            target[parts[1]] = values(3 * count, "f8").reshape(count, 3)
        elif parts[0] == "SCALARS":
            line()  # LOOKUP_TABLE
            target[parts[1]] = values(count, "i4" if parts[2] == "int" else "f8")
        else:
            raise ValueError(f"unexpected VTK line: {s!r}")
    return out


def write_fields(path, grid, v, design, hyper, weights=None, binary=False, title="anisoflow"):
    """Velocity, speed and the per-cell design fields of one state.

    Cell data: ``rho``, ``eps``, ``lambda``, ``fluid`` (eps rho > 0.5),
    ``anisotropic`` (eps < eps0 and rho > rho0) and the ``normal`` vectors.
    """
    from .objective import ObjectiveWeights

    weights = weights or ObjectiveWeights()
    d = grid.dim
    vel = np.asarray(v, dtype=float).reshape(grid.n_nodes, d)
    mat = build_tensors(design, hyper, validate=False)
    aniso = (design.eps < weights.eps0) & (design.rho > weights.rho0)
    cells = {
        "rho": design.rho,
        "eps": design.eps,
        "lambda": mat.lam,
        "fluid": (design.eps * design.rho > 0.5).astype(np.int32),
        "anisotropic": aniso.astype(np.int32),
    }
    for k in range(d - 1):
        cells[f"alpha{k}"] = design.alpha[:, k]
    write_vtk(
        path, grid,
        point_vectors={"velocity": vel},
        point_scalars={"speed": np.linalg.norm(vel, axis=1)},
        cell_scalars=cells,
        cell_vectors={"normal": mat.n},
        binary=binary, title=title,
    )


def write_json(path, obj):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")
