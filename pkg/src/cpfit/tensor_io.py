"""File formats: .tns tensor ingestion/emission and trace CSVs.

The .tns format is one whitespace-separated line per entry: N 1-based
coordinates followed by the value. Lines starting with '#' are comments;
a ``# dims: I J K`` comment pins the dimensions, which are otherwise
inferred as the per-mode coordinate maxima. Duplicate coordinates sum.

Floats are always written with ``repr`` so round-trips are exact and output
bytes are stable for identical inputs.
"""

from __future__ import annotations

import re

import numpy as np

from .core import SparseTensor, from_coords
from .exceptions import DataError
from .trace import RunTrace

_DIMS_RE = re.compile(r"#\s*dims:\s*(.+)")


def parse_tns(path) -> SparseTensor:
    """Read a .tns file into a sparse tensor.

    Raises :class:`DataError` with the offending line number on non-numeric
    tokens, ragged arity, or non-positive coordinates.
    """
    dims_override = None
    coords: list[list[int]] = []
    values: list[float] = []
    arity = None
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                match = _DIMS_RE.match(line)
                if match:
                    try:
                        dims_override = tuple(int(x)
                                              for x in match.group(1).split())
                    except ValueError:
                        raise DataError(
                            f"{path}:{lineno}: malformed dims header") from None
                continue
            parts = line.split()
            if arity is None:
                if len(parts) < 2:
                    raise DataError(
                        f"{path}:{lineno}: need at least one coordinate "
                        "and a value")
                arity = len(parts) - 1
                coords = [[] for _ in range(arity)]
            elif len(parts) != arity + 1:
                raise DataError(
                    f"{path}:{lineno}: expected {arity + 1} fields, "
                    f"got {len(parts)}")
            try:
                cs = [int(p) for p in parts[:-1]]
                val = float(parts[-1])
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric token") from None
            for n, c in enumerate(cs):
                if c < 1:
                    raise DataError(
                        f"{path}:{lineno}: coordinate {c} in mode {n} "
                        "must be >= 1 (coordinates are 1-based)")
                coords[n].append(c - 1)
            values.append(val)
    if arity is None:
        raise DataError(f"{path}: no data lines")
    coord_arrays = [np.asarray(c, dtype=np.int64) for c in coords]
    inferred = tuple(int(c.max()) + 1 for c in coord_arrays)
    if dims_override is not None:
        if len(dims_override) != arity:
            raise DataError(
                f"{path}: dims header has {len(dims_override)} modes, "
                f"data has {arity}")
        for n, (d, m) in enumerate(zip(dims_override, inferred)):
            if d < m:
                raise DataError(
                    f"{path}: mode {n} coordinate {m} exceeds declared "
                    f"dimension {d}")
        dims = dims_override
    else:
        dims = inferred
    return from_coords(coord_arrays, np.asarray(values), dims)


def write_tns(t: SparseTensor, path) -> None:
    """Write a sparse tensor as .tns with a dims header (1-based coords)."""
    coords = t.coords()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# dims: " + " ".join(str(d) for d in t.shape) + "\n")
        for e in range(t.nnz):
            fields = [str(int(coords[n][e]) + 1) for n in range(t.order)]
            fields.append(repr(float(t.values[e])))
            fh.write(" ".join(fields) + "\n")


def write_factors(factors, path) -> None:
    """Write factor matrices into one deterministic binary container."""
    with open(path, "wb") as fh:
        np.save(fh, np.array([len(factors)], dtype=np.int64))
        for f in factors:
            np.save(fh, np.ascontiguousarray(f, dtype=np.float64))


def read_factors(path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        count = int(np.load(fh)[0])
        return [np.load(fh) for _ in range(count)]


def write_trace(trace: RunTrace, path) -> None:
    """Write a trace CSV: '#' metadata lines, a header, one row per record."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# metric={trace.metric_name}\n")
        for key in sorted(trace.metadata):
            fh.write(f"# {key}={trace.metadata[key]}\n")
        fh.write("iter,elapsed_s,objective,metric\n")
        for rec in trace.records:
            fh.write(f"{rec.iteration},{rec.elapsed_s!r},"
                     f"{rec.objective!r},{rec.metric!r}\n")


def read_trace(path) -> RunTrace:
    """Parse a trace CSV written by :func:`write_trace` (exact round-trip)."""
    metadata: dict[str, str] = {}
    metric_name = "rmse"
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    if key.strip() == "metric":
                        metric_name = val.strip()
                    else:
                        metadata[key.strip()] = val.strip()
                continue
            if line.startswith("iter,"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns")
            try:
                records.append((int(parts[0]), float(parts[1]),
                                float(parts[2]), float(parts[3])))
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric token") from None
    trace = RunTrace(metric_name=metric_name, metadata=metadata)
    for it, el, obj, met in records:
        trace.append(it, el, obj, met)
    return trace
