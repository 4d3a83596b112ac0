"""Jitted single-pass inner loops for the order-3 hot paths.

These kernels walk the nonzeros once, keeping the per-entry Hadamard work in
registers instead of materializing nnz-by-rank intermediates. Work splits
over disjoint output slots (rows for the Khatri-Rao contraction, entries for
the elementwise product), so results are bitwise independent of the thread
count. Fallback numpy paths in :mod:`cpfit.kernels` cover other orders and
environments without numba.
"""

import warnings

import numpy as np

try:
    import numba
    from numba import njit, prange
    from numba.core.errors import NumbaWarning

    warnings.filterwarnings("ignore", category=NumbaWarning,
                            message=".*TBB threading layer.*")
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional speedup
    HAS_NUMBA = False


def set_threads(threads: int) -> None:
    if HAS_NUMBA:
        limit = numba.config.NUMBA_NUM_THREADS
        numba.set_num_threads(max(1, min(int(threads), limit)))


if HAS_NUMBA:

    @njit(parallel=True, cache=True)
    def mttkrp3(sorted_vals, idx_a, idx_b, starts, rows, fac_a, fac_b, out):
        # entries pre-sorted by the target mode; group g covers
        # sorted positions starts[g]:starts[g+1] and feeds output row rows[g]
        rank = fac_a.shape[1]
        for g in prange(rows.shape[0]):
            row = rows[g]
            for e in range(starts[g], starts[g + 1]):
                a = fac_a[idx_a[e]]
                b = fac_b[idx_b[e]]
                v = sorted_vals[e]
                for r in range(rank):
                    out[row, r] += (a[r] * b[r]) * v

    @njit(parallel=True, cache=True)
    def tttp3(vals, i0, i1, i2, f0, f1, f2, out):
        rank = f0.shape[1]
        for e in prange(vals.shape[0]):
            a = f0[i0[e]]
            b = f1[i1[e]]
            c = f2[i2[e]]
            acc = 0.0
            for r in range(rank):
                acc += a[r] * b[r] * c[r]
            out[e] = vals[e] * acc
