"""Binary containers and CSV exports.

The container is ``MAGIC``, a little-endian ``uint32`` header length, a UTF-8
JSON header and then the payload arrays as little-endian float64 in the order
listed in ``header["arrays"]``.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .chaos import ChaosMeasure
from .field import CovarianceSpec, FieldSample, GridSpec

MAGIC = b"LQGBIN1\n"
FORMAT_VERSION = 1


def _grid_header(grid: GridSpec) -> dict:
    return {"origin": list(grid.origin), "extent": grid.extent, "n": grid.n}


def _grid_from(h: dict) -> GridSpec:
    return GridSpec(tuple(float(v) for v in h["origin"]), float(h["extent"]), int(h["n"]))


def _write(path, header: dict, arrays) -> None:
    header = dict(header, version=FORMAT_VERSION)
    header["arrays"] = [{"name": k, "shape": list(v.shape)} for k, v in arrays]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a liouville binary container")
        (n,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(n).decode("utf-8"))
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated payload")
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(float).reshape(shape)
    return header, arrays


def save_field(path, sample: FieldSample, measure: ChaosMeasure | None = None) -> None:
    """Write a field sample (and optionally a measure built on it)."""
    header = {
        "kind": "field",
        "grid": _grid_header(sample.grid),
        "spec": {"dimension": sample.spec.dimension, "mass": sample.spec.mass, "cutoff": sample.spec.cutoff},
        "sigma2": sample.sigma2,
        "seed": str(sample.seed),
        "clipped_fraction": sample.clipped_fraction,
        "warnings": list(sample.warnings),
    }
    arrays = [("values", sample.values)]
    if measure is not None:
        header["measure"] = {"gamma": measure.gamma, "flavor": measure.flavor, "eps": measure.eps}
        arrays.append(("masses", measure.masses))
        if measure.seneta_heyde is not None:
            arrays.append(("seneta_heyde", measure.seneta_heyde))
    _write(path, header, arrays)


def load_field(path):
    """Read a container; returns ``(FieldSample, ChaosMeasure or None)``."""
    header, arrays = _read(path)
    if header.get("kind") != "field":
        raise ValueError(f"{path}: unexpected container kind {header.get('kind')!r}")
    grid = _grid_from(header["grid"])
    s = header["spec"]
    spec = CovarianceSpec(int(s["dimension"]), float(s["mass"]), float(s["cutoff"]))
    sample = FieldSample(grid, arrays["values"], float(header["sigma2"]), spec, int(header["seed"]),
                         float(header["clipped_fraction"]), tuple(header["warnings"]))
    measure = None
    if "measure" in header:
        m = header["measure"]
        measure = ChaosMeasure(grid, arrays["masses"], float(m["gamma"]), m["flavor"], float(m["eps"]),
                               arrays.get("seneta_heyde"))
    return sample, measure


# ------------------------------------------------------------------ CSV ---

def fmt(v) -> str:
    """Stable text for CSV/JSON: ``repr`` for floats, lower-case booleans."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=",", lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else fmt(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def measure_rows(measure: ChaosMeasure):
    """Rows ``(cell_index, x, y, mass)``; ``y`` is empty on the line."""
    grid = measure.grid
    if grid.dimension == 1:
        xs = grid.axis_centers(0)
        return [(i, xs[i], "", measure.masses[i]) for i in range(grid.n)]
    c0, c1 = grid.axis_centers(0), grid.axis_centers(1)
    m = measure.masses
    return [(i * grid.n + j, c0[i], c1[j], m[i, j]) for i in range(grid.n) for j in range(grid.n)]


def export_measure(path, measure: ChaosMeasure) -> Path:
    return write_csv(path, ["cell_index", "x", "y", "mass"], measure_rows(measure))


def export_paths(path, times, paths) -> Path:
    """Boundary paths ``(replicate, t, position)``."""
    rows = [(r, t, p) for r, row in enumerate(np.atleast_2d(paths)) for t, p in zip(times, row)]
    return write_csv(path, ["replicate", "t", "position"], rows)


def export_heat_kernel(path, rows) -> Path:
    return write_csv(path, ["t", "x", "y", "p"], rows)


def export_lbm(path, liouville_times, positions) -> Path:
    """Planar LBM draws ``(replicate, liouville_time, x, y)``; ``positions`` is ``(n_times, n, 2)``."""
    rows = [(r, t, p[0], p[1]) for t, block in zip(liouville_times, positions) for r, p in enumerate(block)]
    return write_csv(path, ["replicate", "liouville_time", "x", "y"], rows)


def export_clock(path, clock) -> Path:
    return write_csv(path, ["t", "F"], zip(clock.times, clock.values))


TRANSFORM_COLUMNS = ["gamma", "alpha", "lambda", "dx", "value", "stderr", "n_bridges", "t_low", "t_high", "divergent", "seed"]


def export_transforms(path, estimates) -> Path:
    return write_csv(path, TRANSFORM_COLUMNS, ([e.as_row()[c] for c in TRANSFORM_COLUMNS] for e in estimates))
