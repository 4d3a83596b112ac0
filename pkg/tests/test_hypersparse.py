import numpy as np
import pytest
from scipy import sparse

import cpfit
from cpfit.core import RngState, build_tensor
from cpfit.hypersparse import (CcsrMatrix, butterfly_gather,
                               butterfly_reduce_scatter, ccsr_empty,
                               ccsr_from_coo, ccsr_sum, ccsr_times_dense,
                               matricize_to_ccsr, pairwise_mttkrp,
                               pairwise_tttp, restrict_rows, row_block_bounds,
                               ttm)
from oracles import (mttkrp_dense, random_factors, random_sparse,
                     semisparse_dense, ttm_dense, tttp_dense)


def random_ccsr(rows, cols, nnz, rng):
    seen = {}
    while len(seen) < nnz:
        seen[(int(rng.integers(0, rows)), int(rng.integers(0, cols)))] = \
            float(rng.standard_normal())
    r = [k[0] for k in seen]
    c = [k[1] for k in seen]
    return ccsr_from_coo(r, c, list(seen.values()), rows, cols)


def to_scipy(a):
    return sparse.csr_matrix(a.to_dense())


class TestCcsrMatrix:
    def test_invariants_checked(self):
        with pytest.raises(ValueError):
            CcsrMatrix(2, 2, [0, 0], [0, 1, 2], [0, 1], [1.0, 2.0])
        with pytest.raises(ValueError):
            CcsrMatrix(2, 2, [0], [0, 2], [1, 1], [1.0, 2.0])

    def test_storage_independent_of_global_rows(self):
        rng = np.random.default_rng(0)
        small = random_ccsr(1_000, 64, 500, rng)
        large = random_ccsr(1_000_000, 64, 500, rng)
        assert large.nbytes < 2 * small.nbytes
        assert small.nbytes < 2 * large.nbytes

    def test_storage_linear_in_nnz(self):
        rng = np.random.default_rng(1)
        sizes = [random_ccsr(10_000, 64, n, rng).nbytes
                 for n in (100, 200, 400)]
        assert sizes[0] < sizes[1] < sizes[2]
        # doubling nnz should not much more than double the bytes
        assert sizes[2] < 2.5 * sizes[1]


class TestMatricize:
    def test_diagonal(self):
        t = build_tensor([((0, 0), 1.0), ((1, 1), 2.0)], (2, 2))
        a = matricize_to_ccsr(t, (0,), (1,))
        assert a.nnz_row_ids.tolist() == [0, 1]
        assert a.row_offsets.tolist() == [0, 1, 2]
        assert np.allclose(a.to_dense(), np.diag([1.0, 2.0]))

    def test_merged_row_modes(self):
        t = build_tensor([((1, 2, 3), 5.0)], (2, 3, 4))
        a = matricize_to_ccsr(t, (0, 1), (2,))
        assert a.global_rows == 6
        assert a.nnz_row_ids.tolist() == [5]  # 1*3 + 2
        assert a.col_ids.tolist() == [3]
        assert a.values.tolist() == [5.0]

    def test_empty(self):
        t = build_tensor([], (2, 3))
        a = matricize_to_ccsr(t, (0,), (1,))
        assert a.n_nonzero_rows == 0

    def test_permuted_modes_match_dense(self):
        rng = np.random.default_rng(4)
        t = random_sparse((3, 4, 5), 0.4, rng)
        dense = np.zeros((3, 4, 5))
        coords = t.coords()
        for e in range(t.nnz):
            dense[coords[0][e], coords[1][e], coords[2][e]] = t.values[e]
        a = matricize_to_ccsr(t, (2, 0), (1,))
        expect = np.transpose(dense, (2, 0, 1)).reshape(15, 4)
        assert np.allclose(a.to_dense(), expect)

    def test_partition_validation(self):
        t = build_tensor([((0, 0), 1.0)], (2, 2))
        with pytest.raises(ValueError):
            matricize_to_ccsr(t, (0,), (0,))


class TestCcsrTimesDense:
    def test_scalar_case(self):
        a = ccsr_from_coo([1], [0], [3.0], 2, 2)
        b = np.array([[4.0], [0.0]])
        z = ccsr_times_dense(a, b)
        assert z.fiber_keys.tolist() == [1]
        assert z.payload.tolist() == [[12.0]]

    def test_zero_operand_keeps_structure(self):
        rng = np.random.default_rng(2)
        a = random_ccsr(8, 6, 12, rng)
        z = ccsr_times_dense(a, np.zeros((6, 3)))
        assert z.n_fibers == a.n_nonzero_rows
        assert np.all(z.payload == 0.0)

    def test_empty(self):
        z = ccsr_times_dense(ccsr_empty(5, 4), np.ones((4, 2)))
        assert z.n_fibers == 0

    def test_matches_plain_csr_multiply(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            rows, cols = rng.integers(4, 64, 2)
            nnz = int(rng.integers(1, rows * cols // 2 + 2))
            a = random_ccsr(int(rows), int(cols), nnz, rng)
            b = rng.standard_normal((int(cols), int(rng.integers(1, 5))))
            z = ccsr_times_dense(a, b)
            ref = to_scipy(a) @ b
            dense = np.zeros_like(ref)
            dense[z.fiber_keys.astype(int)] = z.payload
            assert np.allclose(dense, ref, atol=1e-12)

    def test_dimension_mismatch(self):
        a = ccsr_from_coo([0], [0], [1.0], 2, 3)
        with pytest.raises(ValueError):
            ccsr_times_dense(a, np.ones((2, 2)))


class TestCcsrSum:
    def test_identity_element(self):
        rng = np.random.default_rng(5)
        a = random_ccsr(6, 6, 10, rng)
        s = ccsr_sum(a, ccsr_empty(6, 6))
        assert np.allclose(s.to_dense(), a.to_dense())

    def test_hand_merge(self):
        a = ccsr_from_coo([0], [1], [2.0], 3, 3)
        b = ccsr_from_coo([0, 2], [1, 0], [3.0, 1.0], 3, 3)
        s = ccsr_sum(a, b)
        assert s.nnz_row_ids.tolist() == [0, 2]
        expect = np.zeros((3, 3))
        expect[0, 1] = 5.0
        expect[2, 0] = 1.0
        assert np.allclose(s.to_dense(), expect)

    def test_cancellation_retained(self):
        rng = np.random.default_rng(6)
        a = random_ccsr(5, 5, 8, rng)
        neg = CcsrMatrix(5, 5, a.nnz_row_ids, a.row_offsets, a.col_ids,
                         -a.values)
        s = ccsr_sum(a, neg)
        assert s.nnz == a.nnz
        assert np.all(s.values == 0.0)
        assert np.array_equal(s.col_ids, a.col_ids)

    def test_commutative_up_to_float(self):
        rng = np.random.default_rng(7)
        a = random_ccsr(10, 10, 20, rng)
        b = random_ccsr(10, 10, 20, rng)
        ab = ccsr_sum(a, b)
        ba = ccsr_sum(b, a)
        assert np.array_equal(ab.nnz_row_ids, ba.nnz_row_ids)
        assert np.array_equal(ab.col_ids, ba.col_ids)
        assert np.allclose(ab.values, ba.values, atol=1e-14)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        a = random_ccsr(10, 10, 20, rng)
        b = random_ccsr(10, 10, 20, rng)
        s1 = ccsr_sum(a, b)
        s2 = ccsr_sum(a, b)
        assert np.array_equal(s1.values, s2.values)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            ccsr_sum(ccsr_empty(2, 2), ccsr_empty(3, 2))


class TestButterfly:
    def fold(self, parts):
        acc = parts[0]
        for p in parts[1:]:
            acc = ccsr_sum(acc, p)
        return acc

    def test_single_partition(self):
        rng = np.random.default_rng(9)
        a = random_ccsr(4, 4, 6, rng)
        shards = butterfly_reduce_scatter([a], k=2)
        assert len(shards) == 1
        assert np.allclose(shards[0].to_dense(), a.to_dense())

    def test_four_by_four_case(self):
        # small integer-valued 4x4 hypersparse partitions, eager arithmetic
        rng = np.random.default_rng(10)
        parts = []
        for _ in range(4):
            vals = rng.integers(-3, 4, size=5).astype(float)
            parts.append(random_ccsr(4, 4, 5, rng))
            parts[-1] = CcsrMatrix(4, 4, parts[-1].nnz_row_ids,
                                   parts[-1].row_offsets, parts[-1].col_ids,
                                   vals)
        ref = self.fold(parts).to_dense()
        shards = butterfly_reduce_scatter(parts, k=2, canonical=False)
        assert np.allclose(butterfly_gather(shards).to_dense(), ref)
        # integer arithmetic: exact regardless of summation tree
        assert np.array_equal(butterfly_gather(shards).to_dense(), ref)

    def test_canonical_bit_exact_vs_fold(self):
        rng = np.random.default_rng(11)
        for n_parts in (2, 3, 4, 8):
            parts = [random_ccsr(17, 9, 25, rng) for _ in range(n_parts)]
            ref = self.fold(parts)
            for k in (2, 3, 4):
                shards = butterfly_reduce_scatter(parts, k=k, canonical=True)
                assert len(shards) == n_parts
                got = butterfly_gather(shards)
                assert np.array_equal(got.nnz_row_ids, ref.nnz_row_ids)
                assert np.array_equal(got.col_ids, ref.col_ids)
                assert np.array_equal(got.values, ref.values)

    def test_shards_hold_their_row_blocks(self):
        rng = np.random.default_rng(12)
        parts = [random_ccsr(20, 5, 30, rng) for _ in range(4)]
        bounds = row_block_bounds(20, 4)
        shards = butterfly_reduce_scatter(parts, k=2)
        for p, s in enumerate(shards):
            if s.n_nonzero_rows:
                assert s.nnz_row_ids.min() >= bounds[p]
                assert s.nnz_row_ids.max() < bounds[p + 1]

    def test_all_empty(self):
        parts = [ccsr_empty(8, 8) for _ in range(4)]
        shards = butterfly_reduce_scatter(parts, k=2)
        assert all(s.nnz == 0 for s in shards)

    def test_restrict_rows(self):
        rng = np.random.default_rng(13)
        a = random_ccsr(10, 4, 15, rng)
        top = restrict_rows(a, 0, 5)
        bot = restrict_rows(a, 5, 10)
        ref = a.to_dense()
        assert np.allclose(top.to_dense()[:5], ref[:5])
        assert np.all(top.to_dense()[5:] == 0)
        assert np.allclose(bot.to_dense()[5:], ref[5:])


class TestTtm:
    def test_hand_contraction(self):
        t = build_tensor([((0, 0, 0), 1.0), ((0, 0, 1), 2.0)], (2, 2, 2))
        w = np.array([[3.0], [4.0]])
        z = ttm(t, w, 2)
        assert z.n_fibers == 1
        assert z.fiber_keys.tolist() == [0]
        assert np.allclose(z.payload, [[11.0]])

    def test_one_hot_selection(self):
        rng = np.random.default_rng(14)
        t = random_sparse((3, 3, 4), 0.5, rng)
        w = np.eye(4)
        z = ttm(t, w, 2)
        dense = semisparse_dense(z, 4)
        ref = ttm_dense(t, w, 2)
        assert np.allclose(dense, ref)

    def test_empty(self):
        t = build_tensor([], (2, 2, 2))
        assert ttm(t, np.ones((2, 2)), 0).n_fibers == 0

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(15)
        for _ in range(30):
            order = int(rng.integers(2, 5))
            dims = tuple(int(d) for d in rng.integers(2, 7, order))
            t = random_sparse(dims, 0.3, rng)
            mode = int(rng.integers(0, order))
            w = rng.standard_normal((dims[mode], int(rng.integers(1, 4))))
            z = ttm(t, w, mode)
            assert np.allclose(semisparse_dense(z, w.shape[1]),
                               ttm_dense(t, w, mode), atol=1e-12)


class TestPairwiseMttkrp:
    def test_equals_all_at_once(self):
        rng = np.random.default_rng(16)
        for _ in range(50):
            dims = (8, 8, 8)
            t = random_sparse(dims, 0.1, rng)
            factors = random_factors(dims, 3, rng)
            mode = int(rng.integers(0, 3))
            a = pairwise_mttkrp(t, factors, mode)
            b = cpfit.mttkrp(t, factors, mode)
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_empty(self):
        t = build_tensor([], (3, 3, 3))
        out = pairwise_mttkrp(t, random_factors((3, 3, 3), 2,
                                                np.random.default_rng(0)), 0)
        assert np.all(out == 0.0)

    def test_rank1_single_entry(self):
        t = build_tensor([((1, 0, 1), 2.0)], (2, 2, 2))
        u = np.array([[1.0], [2.0]])
        v = np.array([[3.0], [4.0]])
        w = np.array([[5.0], [6.0]])
        out = pairwise_mttkrp(t, [u, v, w], 0)
        assert out[1, 0] == pytest.approx(2.0 * 3.0 * 6.0)
        assert out[0, 0] == 0.0


class TestPairwiseTttp:
    def test_matches_all_at_once(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            dims = (6, 5, 4)
            t = random_sparse(dims, 0.3, rng)
            factors = random_factors(dims, 4, rng)
            a = pairwise_tttp(t, factors)
            b = cpfit.tttp(t, factors)
            assert np.allclose(a.values, b.values, rtol=1e-12, atol=1e-12)

    def test_partial_factors(self):
        rng = np.random.default_rng(18)
        dims = (4, 4, 4)
        t = random_sparse(dims, 0.5, rng)
        factors = random_factors(dims, 3, rng)
        factors[1] = None
        a = pairwise_tttp(t, factors)
        assert np.allclose(a.values, tttp_dense(t, factors), atol=1e-12)
