"""Input validation helpers for array-based arguments.

Factor matrices are plain float64 ndarrays of shape (rows, rank). These
helpers normalize dtypes and enforce shape/rank agreement so the kernels can
assume clean inputs.
"""

from __future__ import annotations

import math

import numpy as np

# numpy indexing requires dims to fit a signed 64-bit int
_MAX_DIM = 2**63 - 1
_MAX_KEYSPACE = 2**64 - 1


def check_shape(dims) -> tuple[int, ...]:
    """Validate tensor dimensions and return them as a tuple of ints.

    Requires at least one mode, every dimension >= 1, and a total cell count
    that fits in an unsigned 64-bit linearized key.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) == 0:
        raise ValueError("tensor must have at least one mode")
    for n, d in enumerate(dims):
        if d < 1:
            raise ValueError(f"dimension of mode {n} must be >= 1, got {d}")
        if d > _MAX_DIM:
            raise ValueError(f"dimension of mode {n} exceeds indexable range: {d}")
    if math.prod(dims) > _MAX_KEYSPACE:
        raise ValueError(
            f"product of dimensions {dims} overflows the 64-bit key space"
        )
    return dims


def check_mode(mode: int, order: int) -> int:
    mode = int(mode)
    if not 0 <= mode < order:
        raise ValueError(f"mode {mode} out of range for order-{order} tensor")
    return mode


def check_factor(a, rows: int | None = None, rank: int | None = None,
                 name: str = "factor") -> np.ndarray:
    """Coerce one factor matrix to a float64 2-D array and check its shape."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={a.ndim}")
    if rows is not None and a.shape[0] != rows:
        raise ValueError(f"{name} has {a.shape[0]} rows, expected {rows}")
    if rank is not None and a.shape[1] != rank:
        raise ValueError(f"{name} has rank {a.shape[1]}, expected {rank}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def check_factor_list(factors, dims, skip_mode: int | None = None,
                      allow_missing: bool = False):
    """Validate a per-mode factor list against tensor dims.

    The ``skip_mode`` slot is ignored entirely. Other slots may be None only
    when ``allow_missing`` (optional-operand kernels); non-None entries must
    agree on rank and match their mode dimension. Returns (list, rank).
    """
    if len(factors) != len(dims):
        raise ValueError(
            f"expected {len(dims)} factor matrices, got {len(factors)}"
        )
    rank = None
    out = []
    for n, f in enumerate(factors):
        if n == skip_mode:
            out.append(None)
            continue
        if f is None:
            if not allow_missing:
                raise ValueError(f"factor[{n}] is required but missing")
            out.append(None)
            continue
        f = check_factor(f, rows=dims[n], name=f"factor[{n}]")
        if rank is None:
            rank = f.shape[1]
        elif f.shape[1] != rank:
            raise ValueError(
                f"factor[{n}] has rank {f.shape[1]}, expected {rank}"
            )
        out.append(f)
    if rank is None:
        raise ValueError("at least one factor matrix must be provided")
    return out, rank
