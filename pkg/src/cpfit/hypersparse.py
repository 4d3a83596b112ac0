"""Doubly-compressed sparse matrices and hypersparse tensor contractions.

A CCSR matrix stores CSR data over the nonzero rows only, plus a map from
compressed row slots back to original row indices. All arrays scale with the
nonzero count, never with the global row count, so matricizations of very
sparse tensors stay cheap to hold and to reduce.

The reduce-scatter collective is simulated over logical partitions in one
address space: "processors" are list slots and "communication" is handoff of
immutable shard values between rounds.
"""

from __future__ import annotations

import math

import numpy as np

from .core import SparseTensor, linearize_many, delinearize_many
from .validation import check_factor, check_factor_list, check_mode, check_shape


class CcsrMatrix:
    """Doubly-compressed sparse row matrix over the nonzero rows only."""

    __slots__ = ("global_rows", "global_cols", "nnz_row_ids", "row_offsets",
                 "col_ids", "values")

    def __init__(self, global_rows, global_cols, nnz_row_ids, row_offsets,
                 col_ids, values, validate: bool = True):
        self.global_rows = int(global_rows)
        self.global_cols = int(global_cols)
        self.nnz_row_ids = np.ascontiguousarray(nnz_row_ids, dtype=np.int64)
        self.row_offsets = np.ascontiguousarray(row_offsets, dtype=np.int64)
        self.col_ids = np.ascontiguousarray(col_ids, dtype=np.int64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if validate:
            self._check()

    def _check(self):
        nrows = self.nnz_row_ids.size
        if self.row_offsets.size != nrows + 1:
            raise ValueError("row_offsets must have (nonzero rows + 1) entries")
        if self.row_offsets[0] != 0 or np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing from 0")
        if self.row_offsets[-1] != self.col_ids.size:
            raise ValueError("row_offsets must end at nnz")
        if self.col_ids.size != self.values.size:
            raise ValueError("col_ids and values must have equal length")
        if nrows:
            if np.any(np.diff(self.nnz_row_ids) <= 0):
                raise ValueError("nnz_row_ids must be strictly increasing")
            if self.nnz_row_ids[0] < 0 or self.nnz_row_ids[-1] >= self.global_rows:
                raise ValueError("row index out of range")
        if self.col_ids.size:
            if self.col_ids.min() < 0 or self.col_ids.max() >= self.global_cols:
                raise ValueError("column index out of range")
            for s, e in zip(self.row_offsets[:-1], self.row_offsets[1:]):
                if np.any(np.diff(self.col_ids[s:e]) <= 0):
                    raise ValueError("columns within a row must strictly increase")

    @property
    def nnz(self) -> int:
        return int(self.col_ids.size)

    @property
    def n_nonzero_rows(self) -> int:
        return int(self.nnz_row_ids.size)

    @property
    def nbytes(self) -> int:
        """Serialized footprint of the four index/value arrays."""
        return (self.nnz_row_ids.nbytes + self.row_offsets.nbytes
                + self.col_ids.nbytes + self.values.nbytes)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.global_rows, self.global_cols))
        for slot, row in enumerate(self.nnz_row_ids):
            s, e = self.row_offsets[slot], self.row_offsets[slot + 1]
            out[row, self.col_ids[s:e]] = self.values[s:e]
        return out

    def __repr__(self) -> str:
        return (f"CcsrMatrix({self.global_rows}x{self.global_cols}, "
                f"nnz={self.nnz}, nonzero_rows={self.n_nonzero_rows})")


def ccsr_empty(global_rows: int, global_cols: int) -> CcsrMatrix:
    return CcsrMatrix(global_rows, global_cols, np.empty(0, np.int64),
                      np.zeros(1, np.int64), np.empty(0, np.int64),
                      np.empty(0), validate=False)


def ccsr_from_coo(rows, cols, values, global_rows, global_cols) -> CcsrMatrix:
    """Build CCSR from unsorted COO triplets with distinct (row, col) pairs."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if rows.size == 0:
        return ccsr_empty(global_rows, global_cols)
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    starts = np.flatnonzero(np.concatenate(([True], rows[1:] != rows[:-1])))
    nnz_row_ids = rows[starts]
    counts = np.diff(np.concatenate((starts, [rows.size])))
    row_offsets = np.zeros(starts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])
    return CcsrMatrix(global_rows, global_cols, nnz_row_ids, row_offsets,
                      cols, values, validate=False)


class SemiSparseTensor:
    """Sparse over its fiber keys, dense along a trailing length-R payload.

    Stores one dense length-R block per nonzero fiber; fibers absent from
    the key list are entirely zero.
    """

    __slots__ = ("shape", "fiber_keys", "payload")

    def __init__(self, shape, fiber_keys, payload):
        self.shape = check_shape(shape)
        self.fiber_keys = np.ascontiguousarray(fiber_keys, dtype=np.uint64)
        self.payload = np.ascontiguousarray(payload, dtype=np.float64)
        if self.payload.ndim != 2 or self.payload.shape[0] != self.fiber_keys.size:
            raise ValueError("payload must be (n_fibers, rank)")
        if self.fiber_keys.size and np.any(self.fiber_keys[1:] <= self.fiber_keys[:-1]):
            raise ValueError("fiber keys must be strictly increasing")

    @property
    def n_fibers(self) -> int:
        return int(self.fiber_keys.size)

    @property
    def rank(self) -> int:
        return int(self.payload.shape[1])

    def fiber_coords(self):
        return delinearize_many(self.fiber_keys, self.shape)


def matricize_to_ccsr(t: SparseTensor, row_modes, col_modes) -> CcsrMatrix:
    """Flatten a sparse tensor to CCSR by merging modes into row/col indices.

    ``row_modes`` and ``col_modes`` must partition the mode set; each entry
    maps to (linearize over row modes, linearize over col modes) with its
    value preserved.
    """
    row_modes = tuple(int(m) for m in row_modes)
    col_modes = tuple(int(m) for m in col_modes)
    if sorted(row_modes + col_modes) != list(range(t.order)):
        raise ValueError("row and col modes must partition the mode set")
    dims = t.shape
    row_dims = [dims[m] for m in row_modes] or [1]
    col_dims = [dims[m] for m in col_modes] or [1]
    global_rows = math.prod(row_dims)
    global_cols = math.prod(col_dims)
    coords = t.coords()
    rk = linearize_many([coords[m] for m in row_modes], row_dims) \
        if row_modes else np.zeros(t.nnz, np.uint64)
    ck = linearize_many([coords[m] for m in col_modes], col_dims) \
        if col_modes else np.zeros(t.nnz, np.uint64)
    if row_modes + col_modes == tuple(range(t.order)):
        # native key order is already (row, col) lexicographic
        return _ccsr_from_sorted(rk.astype(np.int64), ck.astype(np.int64),
                                 t.values, global_rows, global_cols)
    return ccsr_from_coo(rk.astype(np.int64), ck.astype(np.int64), t.values,
                         global_rows, global_cols)


def _ccsr_from_sorted(rows, cols, values, global_rows, global_cols):
    if rows.size == 0:
        return ccsr_empty(global_rows, global_cols)
    starts = np.flatnonzero(np.concatenate(([True], rows[1:] != rows[:-1])))
    counts = np.diff(np.concatenate((starts, [rows.size])))
    row_offsets = np.zeros(starts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])
    return CcsrMatrix(global_rows, global_cols, rows[starts], row_offsets,
                      cols, values, validate=False)


def ccsr_times_dense(a: CcsrMatrix, b) -> SemiSparseTensor:
    """Multiply CCSR by a dense matrix, keeping only rows present in ``a``.

    payload[slot, :] = sum_k a[row, k] * b[k, :] for each nonzero row. Cost
    O(nnz * rank).
    """
    b = check_factor(b, name="dense operand")
    if b.shape[0] != a.global_cols:
        raise ValueError(
            f"dimension mismatch: {a.global_cols} columns vs {b.shape[0]} rows"
        )
    if a.nnz == 0:
        return SemiSparseTensor((a.global_rows,), a.nnz_row_ids.astype(np.uint64),
                                np.zeros((a.n_nonzero_rows, b.shape[1])))
    contrib = a.values[:, None] * b[a.col_ids]
    payload = np.add.reduceat(contrib, a.row_offsets[:-1], axis=0)
    return SemiSparseTensor((a.global_rows,),
                            a.nnz_row_ids.astype(np.uint64), payload)


def ccsr_sum(a: CcsrMatrix, b: CcsrMatrix) -> CcsrMatrix:
    """Sum two CCSR matrices of equal global shape.

    Rows present in both are merged through a dense accumulator of length
    global_cols, scattered in, read back at the union of touched columns, and
    zeroed again, so the buffer is allocated once per call and cleared in
    O(touched) per row. Entries that cancel to exact 0.0 are retained as
    explicit zeros to keep results independent of summation order.
    """
    if (a.global_rows, a.global_cols) != (b.global_rows, b.global_cols):
        raise ValueError("global shapes must match")
    if a.nnz == 0:
        return b
    if b.nnz == 0:
        return a
    union_rows = np.union1d(a.nnz_row_ids, b.nnz_row_ids)
    in_a = np.isin(union_rows, a.nnz_row_ids)
    in_b = np.isin(union_rows, b.nnz_row_ids)
    slot_a = np.searchsorted(a.nnz_row_ids, union_rows)
    slot_b = np.searchsorted(b.nnz_row_ids, union_rows)
    acc = np.zeros(a.global_cols)
    out_cols = []
    out_vals = []
    counts = np.zeros(union_rows.size, dtype=np.int64)
    for u in range(union_rows.size):
        if in_a[u] and in_b[u]:
            sa, ea = a.row_offsets[slot_a[u]], a.row_offsets[slot_a[u] + 1]
            sb, eb = b.row_offsets[slot_b[u]], b.row_offsets[slot_b[u] + 1]
            ca, cb = a.col_ids[sa:ea], b.col_ids[sb:eb]
            acc[ca] += a.values[sa:ea]
            acc[cb] += b.values[sb:eb]
            cols = np.union1d(ca, cb)
            out_cols.append(cols)
            out_vals.append(acc[cols].copy())
            acc[cols] = 0.0
        elif in_a[u]:
            sa, ea = a.row_offsets[slot_a[u]], a.row_offsets[slot_a[u] + 1]
            out_cols.append(a.col_ids[sa:ea])
            out_vals.append(a.values[sa:ea].copy())
        else:
            sb, eb = b.row_offsets[slot_b[u]], b.row_offsets[slot_b[u] + 1]
            out_cols.append(b.col_ids[sb:eb])
            out_vals.append(b.values[sb:eb].copy())
        counts[u] = out_cols[-1].size
    row_offsets = np.zeros(union_rows.size + 1, dtype=np.int64)
    np.cumsum(counts, out=row_offsets[1:])
    col_ids = np.concatenate(out_cols) if out_cols else np.empty(0, np.int64)
    values = np.concatenate(out_vals) if out_vals else np.empty(0)
    return CcsrMatrix(a.global_rows, a.global_cols, union_rows, row_offsets,
                      col_ids, values, validate=False)


def restrict_rows(a: CcsrMatrix, row_lo: int, row_hi: int) -> CcsrMatrix:
    """Rows of ``a`` in [row_lo, row_hi), keeping the global shape."""
    lo = np.searchsorted(a.nnz_row_ids, row_lo, side="left")
    hi = np.searchsorted(a.nnz_row_ids, row_hi, side="left")
    if lo == hi:
        return ccsr_empty(a.global_rows, a.global_cols)
    s, e = a.row_offsets[lo], a.row_offsets[hi]
    offsets = (a.row_offsets[lo:hi + 1] - a.row_offsets[lo]).copy()
    return CcsrMatrix(a.global_rows, a.global_cols, a.nnz_row_ids[lo:hi].copy(),
                      offsets, a.col_ids[s:e].copy(), a.values[s:e].copy(),
                      validate=False)


def row_block_bounds(global_rows: int, n_parts: int) -> list[int]:
    """Boundaries of contiguous row blocks: block p is [bounds[p], bounds[p+1]).

    Uses ceiling division, so the last block may be short (or empty).
    """
    size = -(-global_rows // n_parts)
    return [min(p * size, global_rows) for p in range(n_parts + 1)]


def butterfly_reduce_scatter(parts, k: int = 2, canonical: bool = True):
    """Reduce-scatter a list of CCSR summands over logical partitions.

    Runs ceil(log_k P) rounds of a k-ary butterfly (recursive halving): in
    each round, groups of k partitions split their current row range k ways
    and exchange the pieces, so partition p ends holding row block p of the
    elementwise sum of all inputs. Row blocks follow
    :func:`row_block_bounds`.

    With ``canonical=True`` the exchanged pieces stay tagged with their
    origin partition and each output shard is summed once, in origin order;
    the result is then bit-identical to a sequential left fold of the inputs,
    for any k and P. With ``canonical=False`` sums are applied eagerly each
    round, reproducing the collective's true per-round arithmetic (summation
    order then depends on the butterfly tree).

    Returns a list of P shard matrices (full global shape, disjoint row
    blocks); :func:`butterfly_gather` reassembles the total by concatenation.
    """
    parts = list(parts)
    n_parts = len(parts)
    if n_parts == 0:
        raise ValueError("at least one partition required")
    if k < 2:
        raise ValueError("branching factor k must be >= 2")
    shape = (parts[0].global_rows, parts[0].global_cols)
    for p in parts:
        if (p.global_rows, p.global_cols) != shape:
            raise ValueError("all partitions must share the global shape")
    bounds = row_block_bounds(shape[0], n_parts)
    if n_parts == 1:
        return [parts[0]]

    rounds = 1
    while k ** rounds < n_parts:
        rounds += 1
    padded = k ** rounds

    def slot_rows(slot_lo, slot_hi):
        return bounds[min(slot_lo, n_parts)], bounds[min(slot_hi, n_parts)]

    # state[rank]: list of (origin, piece) restricted to ranges[rank]
    empty = ccsr_empty(*shape)
    state = [[(r, parts[r] if r < n_parts else empty)] for r in range(padded)]
    ranges = [(0, padded)] * padded

    for t in range(rounds):
        stride = k ** (rounds - 1 - t)
        new_state: list = [None] * padded
        new_ranges: list = [None] * padded
        for rank in range(padded):
            digit = (rank // stride) % k
            base = rank - digit * stride
            slot_lo = ranges[rank][0] + digit * stride
            sub = (slot_lo, slot_lo + stride)
            row_lo, row_hi = slot_rows(*sub)
            received = []
            for c in range(k):
                peer = base + c * stride
                for origin, piece in state[peer]:
                    received.append((origin, restrict_rows(piece, row_lo, row_hi)))
            if not canonical:
                received.sort(key=lambda kv: kv[0])
                acc = received[0][1]
                for _, piece in received[1:]:
                    acc = ccsr_sum(acc, piece)
                received = [(rank, acc)]
            new_state[rank] = received
            new_ranges[rank] = sub
        state = new_state
        ranges = new_ranges

    shards = []
    for rank in range(n_parts):
        pieces = sorted(state[rank], key=lambda kv: kv[0])
        acc = pieces[0][1]
        for _, piece in pieces[1:]:
            acc = ccsr_sum(acc, piece)
        shards.append(acc)
    return shards


def butterfly_gather(shards) -> CcsrMatrix:
    """Concatenate disjoint row-block shards back into one matrix."""
    shards = [s for s in shards if s.n_nonzero_rows]
    if not shards:
        raise ValueError("cannot gather zero shards")
    for prev, nxt in zip(shards[:-1], shards[1:]):
        if prev.nnz_row_ids[-1] >= nxt.nnz_row_ids[0]:
            raise ValueError("shard row ranges must be disjoint and increasing")
    first = shards[0]
    nnz_row_ids = np.concatenate([s.nnz_row_ids for s in shards])
    col_ids = np.concatenate([s.col_ids for s in shards])
    values = np.concatenate([s.values for s in shards])
    offsets = [np.zeros(1, np.int64)]
    base = 0
    for s in shards:
        offsets.append(s.row_offsets[1:] + base)
        base += s.nnz
    return CcsrMatrix(first.global_rows, first.global_cols, nnz_row_ids,
                      np.concatenate(offsets), col_ids, values, validate=False)


def ttm(t: SparseTensor, w, mode: int) -> SemiSparseTensor:
    """Tensor-times-matrix along ``mode`` via matricization and CCSR multiply.

    Output fibers are indexed over the non-contracted modes (original order);
    only fibers touched by at least one nonzero appear. Cost O(nnz * rank).
    """
    mode = check_mode(mode, t.order)
    w = check_factor(w, rows=t.shape[mode], name="ttm operand")
    row_modes = tuple(n for n in range(t.order) if n != mode)
    mat = matricize_to_ccsr(t, row_modes, (mode,))
    prod = ccsr_times_dense(mat, w)
    out_shape = tuple(t.shape[n] for n in row_modes) or (1,)
    return SemiSparseTensor(out_shape, prod.fiber_keys, prod.payload)


def pairwise_mttkrp(t: SparseTensor, factors, mode: int) -> np.ndarray:
    """MTTKRP evaluated as a chain of pairwise contractions.

    Contracts the last non-target mode with :func:`ttm` (through the
    hypersparse matricization), then folds the remaining factors into the
    semisparse intermediate fiber by fiber. Numerically equivalent to the
    all-at-once kernel; kept as an independently-routed baseline.
    """
    mode = check_mode(mode, t.order)
    factors, rank = check_factor_args(t, factors, mode)
    out = np.zeros((t.shape[mode], rank))
    if t.nnz == 0:
        return out
    contracted = max(n for n in range(t.order) if n != mode)
    z = ttm(t, factors[contracted], contracted)
    remaining = [n for n in range(t.order) if n != contracted]
    fiber_coords = z.fiber_coords()
    coord_of = dict(zip(remaining, fiber_coords))
    target_idx = coord_of[mode]
    for r in range(rank):
        w = z.payload[:, r].copy()
        for n in remaining:
            if n == mode:
                continue
            w *= factors[n][coord_of[n], r]
        out[:, r] = np.bincount(target_idx, weights=w,
                                minlength=t.shape[mode])
    return out


def pairwise_tttp(t: SparseTensor, factors) -> SparseTensor:
    """TTTP evaluated as a chain of pairwise binary contractions.

    Expands the sparse tensor against the first provided factor into a
    semisparse intermediate carrying a dense length-R payload per nonzero,
    folds the remaining factors in one at a time, then contracts the rank
    axis. Materializes the O(nnz * R) intermediate that the all-at-once
    kernel avoids; kept as a baseline.
    """
    provided = [(n, f) for n, f in enumerate(factors) if f is not None]
    if not provided:
        raise ValueError("at least one factor must be provided")
    coords = t.coords()
    first_mode, first = provided[0]
    check_factor(first, rows=t.shape[first_mode])
    payload = t.values[:, None] * first[coords[first_mode]]
    for n, f in provided[1:]:
        check_factor(f, rows=t.shape[n], rank=payload.shape[1])
        payload = payload * f[coords[n]]
    return t.with_values(payload.sum(axis=1))


def check_factor_args(t: SparseTensor, factors, mode: int):
    """Shared validation for MTTKRP-style factor lists (target mode ignored)."""
    return check_factor_list(factors, t.shape, skip_mode=mode)
