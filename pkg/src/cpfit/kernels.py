"""All-at-once multi-tensor kernels: MTTKRP, TTTP/SDDMM, and factor solves.

Each kernel streams once over the nonzeros of a sparse tensor, combining all
factor operands per entry instead of materializing pairwise intermediates:

- ``mttkrp``       out[i, r] = sum over entries with mode index i of
                   value * prod over other modes of factor[i_n, r]
- ``tttp``         out value = value * sum_r prod over provided modes
- ``solve_factor`` per-row normal equations (G_i + reg*I) x = rhs_i with
                   G_i accumulated from weighted Hadamard rows

Outputs depend only on the input entry order (which is canonical, keys
sorted), so results are bitwise reproducible regardless of thread count:
threads only split work across disjoint output slices.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _jit
from .core import SparseTensor, counting_sort_by_mode
from .exceptions import NumericalError
from .validation import check_factor, check_factor_list, check_mode

# cap on the nnz x (columns per slice) intermediate a single TTTP step builds
DEFAULT_TTTP_BUDGET_BYTES = 1 << 28
# column block size for MTTKRP accumulation passes
_MTTKRP_COL_BLOCK = 8
# rows of staged Hadamard products per rank-k accumulation flush
DEFAULT_STAGE_ROWS = 256


def _run_tasks(tasks, threads: int):
    """Run closures writing to disjoint outputs, optionally on a thread pool."""
    if threads <= 1 or len(tasks) <= 1:
        for task in tasks:
            task()
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda f: f(), tasks))


def mttkrp(t: SparseTensor, factors, mode: int, threads: int = 1) -> np.ndarray:
    """Matricized tensor times Khatri-Rao product, all at once.

    Contracts the sparse tensor with every factor except ``factors[mode]``
    (which may be None) and accumulates into a dims[mode] x R dense matrix.
    Rows with no incident nonzeros are exactly zero. Cost O(nnz * R).
    """
    mode = check_mode(mode, t.order)
    factors, rank = check_factor_list(factors, t.shape, skip_mode=mode)
    out = np.zeros((t.shape[mode], rank))
    if t.nnz == 0:
        return out
    perm, offsets = t.mode_group(mode)
    coords = t.coords()
    sorted_vals = t.values[perm]
    sorted_idx = [coords[n][perm] if n != mode else None
                  for n in range(t.order)]
    rows_nnz = np.flatnonzero(np.diff(offsets))
    starts = offsets[rows_nnz]

    if t.order == 3 and _jit.HAS_NUMBA:
        others = [n for n in range(3) if n != mode]
        _jit.set_threads(threads)
        _jit.mttkrp3(sorted_vals, sorted_idx[others[0]],
                     sorted_idx[others[1]],
                     np.append(starts, offsets[-1]).astype(np.int64),
                     rows_nnz.astype(np.int64), factors[others[0]],
                     factors[others[1]], out)
        return out

    def make_task(lo, hi):
        def task():
            prod = None
            for n in range(t.order):
                if n == mode:
                    continue
                g = np.take(factors[n][:, lo:hi], sorted_idx[n], axis=0)
                prod = g if prod is None else prod * g
            prod *= sorted_vals[:, None]
            out[rows_nnz, lo:hi] = np.add.reduceat(prod, starts, axis=0)
        return task

    blocks = [(lo, min(lo + _MTTKRP_COL_BLOCK, rank))
              for lo in range(0, rank, _MTTKRP_COL_BLOCK)]
    _run_tasks([make_task(lo, hi) for lo, hi in blocks], threads)
    return out


def _tttp_slices(rank: int, h_slices, nnz: int,
                 budget_bytes: int) -> list[np.ndarray]:
    if h_slices is None:
        per_slice = max(1, budget_bytes // max(1, nnz * 8))
        h_slices = -(-rank // per_slice)
    h_slices = int(h_slices)
    if not 1 <= h_slices <= rank:
        raise ValueError(f"h_slices must be in [1, rank], got {h_slices}")
    return np.array_split(np.arange(rank), h_slices)


def tttp(t: SparseTensor, factors, h_slices: int | None = None,
         budget_bytes: int = DEFAULT_TTTP_BUDGET_BYTES,
         threads: int = 1) -> SparseTensor:
    """Tensor-times-tensor product: scale entries by multilinear row products.

    out value at entry e = t value * sum_r prod over provided modes n of
    factors[n][coords[n][e], r]. Factor slots set to None are skipped; at
    least one must be provided. The factor columns are processed in
    ``h_slices`` batches (chosen from ``budget_bytes`` when None) so the
    per-step intermediate stays at nnz x (R / h_slices); the result is
    independent of the slicing up to float summation order. Cost O(nnz * R).
    """
    factors, rank = check_factor_list(factors, t.shape, allow_missing=True)
    if t.nnz == 0:
        return t
    coords = t.coords()
    slices = _tttp_slices(rank, h_slices, t.nnz, budget_bytes)

    if t.order == 3 and _jit.HAS_NUMBA and all(f is not None for f in factors):
        out = np.empty(t.nnz)
        _jit.set_threads(threads)
        _jit.tttp3(t.values, coords[0], coords[1], coords[2],
                   factors[0], factors[1], factors[2], out)
        return t.with_values(out)

    partials = [None] * len(slices)

    def make_task(si, cols):
        lo, hi = int(cols[0]), int(cols[-1]) + 1

        def task():
            prod = None
            for n in range(t.order):
                if factors[n] is None:
                    continue
                g = np.take(factors[n][:, lo:hi], coords[n], axis=0)
                prod = g if prod is None else prod * g
            partials[si] = prod.sum(axis=1)
        return task

    _run_tasks([make_task(si, cols) for si, cols in enumerate(slices)], threads)
    acc = partials[0]
    for p in partials[1:]:
        acc += p
    return t.with_values(t.values * acc)


def sddmm(s: SparseTensor, u, v, threads: int = 1) -> SparseTensor:
    """Sampled dense-dense matrix multiply: S had-prod (U V^T) on the pattern of S."""
    if s.order != 2:
        raise ValueError(f"sddmm requires an order-2 tensor, got order {s.order}")
    return tttp(s, [u, v], threads=threads)


def gram_blocks(weights: SparseTensor, factors, mode: int,
                row_batches: int = 1, stage_rows: int = DEFAULT_STAGE_ROWS,
                threads: int = 1) -> np.ndarray:
    """Per-row normal-equation matrices from a nonnegative weight tensor.

    G[i, r, s] = sum over entries with mode index i of
    weight * prod_{n != mode} factors[n][i_n, r] * prod_{n != mode} factors[n][i_n, s]

    Entries are grouped by mode index with a counting sort, Hadamard rows are
    staged scaled by sqrt(weight), and each group is accumulated by rank-k
    updates of at most ``stage_rows`` rows. ``row_batches`` bounds how many
    rows' staged products are alive at once. Cost O(nnz * R^2), memory
    O(nnz * R / row_batches + I * R^2).
    """
    mode = check_mode(mode, weights.order)
    factors, rank = check_factor_list(factors, weights.shape, skip_mode=mode)
    if np.any(weights.values < 0.0):
        raise ValueError("weights must be nonnegative for normal-equation assembly")
    n_rows = weights.shape[mode]
    if not 1 <= row_batches:
        raise ValueError("row_batches must be >= 1")
    gram = np.zeros((n_rows, rank, rank))
    if weights.nnz == 0:
        return gram
    perm, offsets = weights.mode_group(mode)
    coords = weights.coords()
    sqrt_w = np.sqrt(weights.values[perm])
    sorted_idx = [coords[n][perm] if n != mode else None for n in range(weights.order)]
    batch_bounds = np.linspace(0, n_rows, int(row_batches) + 1).astype(np.int64)

    def make_task(row_lo, row_hi):
        def task():
            lo, hi = offsets[row_lo], offsets[row_hi]
            if lo == hi:
                return
            staged = None
            for n in range(weights.order):
                if n == mode:
                    continue
                g = np.take(factors[n], sorted_idx[n][lo:hi], axis=0)
                staged = g if staged is None else staged * g
            staged *= sqrt_w[lo:hi, None]
            for i in range(row_lo, row_hi):
                s, e = offsets[i] - lo, offsets[i + 1] - lo
                for cs in range(s, e, stage_rows):
                    chunk = staged[cs:min(cs + stage_rows, e)]
                    gram[i] += chunk.T @ chunk
        return task

    tasks = [make_task(batch_bounds[b], batch_bounds[b + 1])
             for b in range(int(row_batches))
             if batch_bounds[b] < batch_bounds[b + 1]]
    _run_tasks(tasks, threads)
    return gram


def solve_factor(weights: SparseTensor, factors, rhs, mode: int,
                 reg: float = 0.0, row_batches: int = 1,
                 stage_rows: int = DEFAULT_STAGE_ROWS, threads: int = 1,
                 return_gram: bool = False):
    """Solve the per-row regularized normal equations for one factor matrix.

    For every row i of ``mode``, solves (G_i + reg*I) x_i = rhs_i with G_i
    as in :func:`gram_blocks`. Rows with no incident nonzeros solve
    reg * x = rhs_i (so x = rhs_i / reg); with reg == 0 such a row is solvable
    only when its right-hand side is zero. Results are independent of
    ``row_batches``. Cost O(nnz * R^2 + I * R^3).

    Raises
    ------
    NumericalError
        If reg == 0 and some row's system is singular (the row is named).
    """
    mode = check_mode(mode, weights.order)
    rhs = check_factor(rhs, rows=weights.shape[mode], name="rhs")
    rank = rhs.shape[1]
    gram = gram_blocks(weights, factors, mode, row_batches=row_batches,
                       stage_rows=stage_rows, threads=threads)
    if gram.shape[1] != rank:
        raise ValueError(
            f"rhs rank {rank} does not match factor rank {gram.shape[1]}"
        )
    reg = float(reg)
    if reg < 0.0:
        raise ValueError("regularization must be >= 0")
    lhs = gram + reg * np.eye(rank)
    out = np.empty_like(rhs)
    if reg == 0.0:
        _, offsets = weights.mode_group(mode)
        empty = np.diff(offsets) == 0
        if np.any(empty):
            bad = empty & np.any(rhs != 0.0, axis=1)
            if np.any(bad):
                row = int(np.flatnonzero(bad)[0])
                raise NumericalError(
                    f"mode {mode} row {row}: no incident entries and reg=0 "
                    "but right-hand side is nonzero"
                )
            lhs[empty] = np.eye(rank)  # identity systems, rhs rows are zero
    try:
        out[:] = np.linalg.solve(lhs, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        row = _first_singular_row(lhs)
        raise NumericalError(
            f"mode {mode} row {row}: singular normal equations (reg={reg})"
        ) from None
    if return_gram:
        return out, gram
    return out


def _first_singular_row(lhs: np.ndarray) -> int:
    for i in range(lhs.shape[0]):
        try:
            np.linalg.solve(lhs[i], np.zeros(lhs.shape[1]))
        except np.linalg.LinAlgError:
            return i
    return -1
