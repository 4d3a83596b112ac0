"""Sparse coordinate-format tensors, index arithmetic, and synthetic data.

A sparse tensor stores sorted 64-bit linearized keys plus float64 values.
Linearization is lexicographic with the last mode varying fastest (row-major),
so entries sorted by key are grouped by leading-mode index. Tensors are
immutable after construction and safe for concurrent reads; derived tensors
that share the sparsity pattern (``with_values``) also share cached coordinate
and grouping arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError
from .validation import check_mode, check_shape

# refuse to enumerate observation masks over cell spaces larger than this
DEFAULT_CELL_CAP = 1 << 26


@dataclass(frozen=True)
class RngState:
    """Value-like handle on a splittable counter-based random stream.

    The same (seed, path) always yields the same stream, independent of
    thread count or call site. ``child`` derives an independent stream;
    callers split explicitly before any parallel or repeated use.
    """

    seed: int
    path: tuple[int, ...] = field(default=())
    algorithm: str = "philox"

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))

    def child(self, key: int) -> "RngState":
        return RngState(self.seed, self.path + (int(key),), self.algorithm)

    def split(self, n: int) -> list["RngState"]:
        return [self.child(i) for i in range(n)]


def linearize(coords, dims) -> int:
    """Map mode indices to the 64-bit row-major key.

    key = ((...(i_1 * I_2 + i_2) * I_3 + i_3)...) * I_N + i_N
    """
    dims = check_shape(dims)
    if len(coords) != len(dims):
        raise ValueError(f"expected {len(dims)} coordinates, got {len(coords)}")
    key = 0
    for n, (c, d) in enumerate(zip(coords, dims)):
        c = int(c)
        if not 0 <= c < d:
            raise ValueError(f"coordinate {c} out of range [0, {d}) in mode {n}")
        key = key * d + c
    return key


def delinearize(key: int, dims) -> tuple[int, ...]:
    """Inverse of :func:`linearize` for a single key."""
    dims = check_shape(dims)
    key = int(key)
    if not 0 <= key < math.prod(dims):
        raise ValueError(f"key {key} out of range for shape {dims}")
    coords = [0] * len(dims)
    for n in range(len(dims) - 1, -1, -1):
        key, coords[n] = divmod(key, dims[n])
    return tuple(coords)


def linearize_many(coord_arrays, dims) -> np.ndarray:
    """Vectorized linearize: per-mode index arrays to a uint64 key array."""
    dims = check_shape(dims)
    if len(coord_arrays) != len(dims):
        raise ValueError("one coordinate array per mode required")
    n_entries = len(coord_arrays[0]) if len(coord_arrays) else 0
    keys = np.zeros(n_entries, dtype=np.uint64)
    for n, (c, d) in enumerate(zip(coord_arrays, dims)):
        c = np.asarray(c)
        if c.size and (c.min() < 0 or c.max() >= d):
            raise ValueError(f"coordinate out of range [0, {d}) in mode {n}")
        keys = keys * np.uint64(d) + c.astype(np.uint64)
    return keys


def delinearize_many(keys: np.ndarray, dims) -> tuple[np.ndarray, ...]:
    """Vectorized delinearize: uint64 keys to per-mode int64 index arrays."""
    dims = check_shape(dims)
    rem = np.asarray(keys, dtype=np.uint64).copy()
    coords = [None] * len(dims)
    for n in range(len(dims) - 1, -1, -1):
        d = np.uint64(dims[n])
        coords[n] = (rem % d).astype(np.int64)
        rem //= d
    return tuple(coords)


class SparseTensor:
    """Order-N sparse tensor in sorted linearized-key coordinate format.

    Invariants: keys strictly increasing uint64, every key < prod(dims),
    len(keys) == len(values). Explicit zeros are retained, so the pattern
    can represent an observation mask that observes zero values.
    """

    __slots__ = ("shape", "keys", "values", "_coords", "_groups")

    def __init__(self, shape, keys, values, validate: bool = True):
        shape = check_shape(shape)
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        values = np.ascontiguousarray(values, dtype=np.float64)
        if validate:
            if keys.ndim != 1 or values.ndim != 1 or keys.shape != values.shape:
                raise ValueError("keys and values must be 1-D of equal length")
            if keys.size:
                if np.any(keys[1:] <= keys[:-1]):
                    raise ValueError("keys must be strictly increasing")
                if int(keys[-1]) >= math.prod(shape):
                    raise ValueError("key out of range for shape")
        self.shape = shape
        self.keys = keys
        self.values = values
        self._coords = None
        self._groups = {}

    @property
    def order(self) -> int:
        return len(self.shape)

    @property
    def nnz(self) -> int:
        return int(self.keys.size)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Per-mode int64 coordinate arrays (computed once, then cached)."""
        if self._coords is None:
            self._coords = delinearize_many(self.keys, self.shape)
        return self._coords

    def mode_group(self, mode: int):
        """Cached (permutation, offsets) grouping entries by mode index.

        See :func:`counting_sort_by_mode`.
        """
        mode = check_mode(mode, self.order)
        hit = self._groups.get(mode)
        if hit is None:
            hit = counting_sort_by_mode(self, mode)
            self._groups[mode] = hit
        return hit

    def with_values(self, values) -> "SparseTensor":
        """New tensor sharing this pattern (keys, caches) with other values."""
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape != self.keys.shape:
            raise ValueError("values length must match nnz")
        out = SparseTensor(self.shape, self.keys, values, validate=False)
        out._coords = self._coords
        out._groups = self._groups
        return out

    def observation_mask(self) -> "SparseTensor":
        """Unit-valued tensor on the same pattern (1.0 at every stored entry)."""
        return self.with_values(np.ones(self.nnz))

    def sample(self, rate: float, rng: RngState) -> "SparseTensor":
        """Keep each entry independently with probability ``rate``.

        Deterministic for a fixed ``rng``; surviving entries keep their order.
        """
        if not 0.0 < rate <= 1.0:
            raise ValueError(f"sample rate must be in (0, 1], got {rate}")
        draws = rng.generator().random(self.nnz)
        keep = draws < rate
        return SparseTensor(self.shape, self.keys[keep], self.values[keep],
                            validate=False)

    def norm_sq(self) -> float:
        return float(np.dot(self.values, self.values))

    def __repr__(self) -> str:
        return (f"SparseTensor(shape={self.shape}, nnz={self.nnz})")


def build_tensor(entries, shape) -> SparseTensor:
    """Build a tensor from an unsorted list of ((coords...), value) pairs.

    Duplicate coordinates are merged by summation; explicit zero results are
    retained.
    """
    shape = check_shape(shape)
    if not entries:
        return SparseTensor(shape, np.empty(0, np.uint64), np.empty(0))
    keys = np.fromiter((linearize(c, shape) for c, _ in entries),
                       dtype=np.uint64, count=len(entries))
    values = np.fromiter((v for _, v in entries), dtype=np.float64,
                         count=len(entries))
    return _merge_sorted(shape, keys, values)


def from_coords(coord_arrays, values, shape) -> SparseTensor:
    """Vectorized constructor from per-mode coordinate arrays.

    Duplicates are summed, as in :func:`build_tensor`.
    """
    shape = check_shape(shape)
    values = np.ascontiguousarray(values, dtype=np.float64)
    keys = linearize_many(coord_arrays, shape)
    if keys.shape != values.shape:
        raise ValueError("coordinate arrays and values must have equal length")
    return _merge_sorted(shape, keys, values)


def _merge_sorted(shape, keys, values) -> SparseTensor:
    if keys.size == 0:
        return SparseTensor(shape, keys, values, validate=False)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    values = values[order]
    starts = np.flatnonzero(np.concatenate(([True], keys[1:] != keys[:-1])))
    if starts.size != keys.size:
        values = np.add.reduceat(values, starts)
        keys = keys[starts]
    return SparseTensor(shape, keys, values, validate=False)


def counting_sort_by_mode(t: SparseTensor, mode: int):
    """Stable grouping of entry positions by their index along ``mode``.

    Returns ``(perm, offsets)``: ``perm`` lists entry positions grouped by
    mode index in increasing order (stable within groups); ``offsets`` has
    dims[mode] + 1 entries, with group ``i`` occupying
    ``perm[offsets[i]:offsets[i+1]]``. Cost O(nnz + dims[mode]).
    """
    mode = check_mode(mode, t.order)
    idx = t.coords()[mode]
    counts = np.bincount(idx, minlength=t.shape[mode])
    offsets = np.zeros(t.shape[mode] + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    # stable argsort on integer keys is a radix/counting sort internally
    perm = np.argsort(idx, kind="stable")
    return perm, offsets


def model_values(factors, coord_arrays, col_block: int = 32) -> np.ndarray:
    """Multilinear inner products of factor rows at the given coordinates.

    values[e] = sum_r prod_n factors[n][coords[n][e], r]
    """
    n_entries = len(coord_arrays[0]) if len(coord_arrays) else 0
    rank = factors[0].shape[1]
    out = np.zeros(n_entries)
    for lo in range(0, rank, col_block):
        hi = min(lo + col_block, rank)
        prod = factors[0][coord_arrays[0], lo:hi].copy()
        for n in range(1, len(factors)):
            prod *= factors[n][coord_arrays[n], lo:hi]
        out += prod.sum(axis=1)
    return out


def gen_low_rank(shape, rank: int, observed_fraction: float,
                 value_law: str = "uniform01", rng: RngState | None = None,
                 cell_cap: int = DEFAULT_CELL_CAP):
    """Synthesize an exactly low-rank tensor observed on a Bernoulli mask.

    Ground-truth factors are drawn per ``value_law`` ("uniform01" or
    "gaussian"); each cell is observed independently with probability
    ``observed_fraction`` and carries the exact multilinear inner product of
    the ground-truth factor rows.

    Returns (observed SparseTensor, list of ground-truth factors).

    Raises
    ------
    DataError
        If the dense cell space exceeds ``cell_cap`` (mask enumeration would
        not be feasible at this scale).
    """
    shape = check_shape(shape)
    if not 0.0 < observed_fraction <= 1.0:
        raise ValueError("observed_fraction must be in (0, 1]")
    total = math.prod(shape)
    if total > cell_cap:
        raise DataError(
            f"cell space {total} exceeds enumeration cap {cell_cap}; "
            "raise cell_cap explicitly for larger masks"
        )
    if rng is None:
        rng = RngState(0)
    g = rng.generator()
    factors = []
    for d in shape:
        if value_law == "uniform01":
            factors.append(g.random((d, rank)))
        elif value_law == "gaussian":
            factors.append(g.standard_normal((d, rank)))
        else:
            raise ValueError(f"unknown value_law {value_law!r}")
    if observed_fraction >= 1.0:
        keys = np.arange(total, dtype=np.uint64)
    else:
        keys = np.flatnonzero(g.random(total) < observed_fraction)
        keys = keys.astype(np.uint64)
    t = SparseTensor(shape, keys, np.zeros(keys.size), validate=False)
    values = model_values(factors, t.coords())
    return t.with_values(values), factors


def gen_function_tensor(shape, observed_fraction: float,
                        rng: RngState | None = None, func=None,
                        cell_cap: int = DEFAULT_CELL_CAP) -> SparseTensor:
    """Sample a smooth separable-decay function on a Bernoulli-observed mask.

    Placeholder generator for approximately low-rank "function" tensors; the
    default is f(i_1..i_N) = 1 / (1 + i_1 + ... + i_N). Useful as a model
    problem, but carries no correctness weight anywhere in the test suite.
    """
    shape = check_shape(shape)
    if not 0.0 < observed_fraction <= 1.0:
        raise ValueError("observed_fraction must be in (0, 1]")
    total = math.prod(shape)
    if total > cell_cap:
        raise DataError(
            f"cell space {total} exceeds enumeration cap {cell_cap}"
        )
    if rng is None:
        rng = RngState(0)
    if func is None:
        def func(coords):
            s = np.zeros(len(coords[0]))
            for c in coords:
                s += c
            return 1.0 / (1.0 + s)
    g = rng.generator()
    if observed_fraction >= 1.0:
        keys = np.arange(total, dtype=np.uint64)
    else:
        keys = np.flatnonzero(g.random(total) < observed_fraction).astype(np.uint64)
    t = SparseTensor(shape, keys, np.zeros(keys.size), validate=False)
    return t.with_values(func(t.coords()))
