import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vvma.core import (VvmaParam, blocks, expand, matvec, new_vvma, pad_matrix, pad_shape,
                       param_count)


def random_param(k, r, c, seed, diag_enabled=True):
    return new_vvma(k, r, c, "normal", rng_seed=seed, diag_enabled=diag_enabled)


def dense_reference(p):
    """Blockwise construction with explicit diagonal matrices."""
    k = p.k
    out = np.zeros(p.shape)
    for i in range(p.r):
        for j in range(p.c):
            D = np.diag(p.diags[i, j]) if p.diag_enabled else np.eye(k)
            out[i * k:(i + 1) * k, j * k:(j + 1) * k] = p.m_scale * p.M @ D
    return out


class TestNewVvma:
    def test_zero_init(self):
        p = new_vvma(2, 1, 1, "zeros", rng_seed=0)
        assert np.array_equal(p.M, np.zeros((2, 2)))
        assert p.diags.shape == (1, 1, 2)
        assert np.array_equal(p.diags[0, 0], [0.0, 0.0])

    def test_default_count(self):
        p = new_vvma(32, 8, 8, "default", rng_seed=7)
        assert param_count(p) == 32**2 + 8 * 8 * 32 == 3072

    def test_k1_ones_expands_to_all_ones(self):
        p = new_vvma(1, 3, 3, "ones", rng_seed=0)
        assert np.array_equal(expand(p), np.ones((3, 3)))

    def test_default_init_range_and_ones_diagonals(self):
        k = 16
        p = new_vvma(k, 2, 3, "default", rng_seed=1)
        s = np.sqrt(6 / (2 * k))
        assert np.all(np.abs(p.M) <= s)
        assert np.all(p.diags == 1.0)
        # ones diagonals: expansion is a plain tiling of M
        assert np.array_equal(expand(p), np.tile(p.M, (2, 3)))

    def test_deterministic(self):
        a = new_vvma(8, 2, 2, "normal", rng_seed=5)
        b = new_vvma(8, 2, 2, "normal", rng_seed=5)
        c = new_vvma(8, 2, 2, "normal", rng_seed=6)
        assert np.array_equal(a.M, b.M) and np.array_equal(a.diags, b.diags)
        assert not np.array_equal(a.M, c.M)

    @pytest.mark.parametrize("dims", [(0, 1, 1), (1, 0, 1), (1, 1, -2)])
    def test_rejects_nonpositive(self, dims):
        with pytest.raises(ValueError):
            new_vvma(*dims)

    def test_rejects_overflow(self):
        with pytest.raises(OverflowError):
            new_vvma(2**20, 2**20, 2**20, "zeros")

    def test_unknown_init(self):
        with pytest.raises(ValueError):
            new_vvma(2, 1, 1, "xavier")


class TestVvmaParam:
    def test_immutable(self):
        p = random_param(3, 2, 2, 0)
        with pytest.raises(ValueError):
            p.M[0, 0] = 1.0
        with pytest.raises(Exception):
            p.k = 4

    def test_copies_inputs(self):
        M = np.eye(2)
        p = VvmaParam(M, np.ones((1, 1, 2)))
        M[0, 0] = 5.0
        assert p.M[0, 0] == 1.0

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            VvmaParam(np.ones((2, 3)), np.ones((1, 1, 2)))
        with pytest.raises(ValueError):
            VvmaParam(np.ones((2, 2)), np.ones((1, 1, 3)))
        with pytest.raises(ValueError):
            VvmaParam(np.ones((2, 2)), np.ones((2, 2)))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            VvmaParam(np.array([[np.nan]]), np.ones((1, 1, 1)))
        with pytest.raises(ValueError):
            VvmaParam(np.eye(1), np.full((1, 1, 1), np.inf))

    def test_no_diag_default_scale(self):
        p = VvmaParam(np.eye(2), np.ones((1, 1, 2)), diag_enabled=False)
        assert p.m_scale == 0.1
        assert VvmaParam(np.eye(2), np.ones((1, 1, 2))).m_scale == 1.0

    def test_json_round_trip_bit_exact(self):
        p = new_vvma(4, 2, 3, "normal", rng_seed=11).replace(m_scale=1 / 3)
        doc = json.loads(p.to_json())
        assert set(doc) == {"k", "r", "c", "diag_enabled", "m_scale", "M", "diags"}
        assert len(doc["M"]) == 16 and len(doc["diags"]) == 6 and len(doc["diags"][0]) == 4
        q = VvmaParam.from_json(p.to_json())
        assert q.M.tobytes() == p.M.tobytes()
        assert q.diags.tobytes() == p.diags.tobytes()
        assert q.m_scale == p.m_scale and q.diag_enabled == p.diag_enabled

    def test_json_diag_grid_order(self):
        diags = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
        p = VvmaParam(np.eye(2), diags)
        doc = p.to_dict()
        # row-major grid order: (0,0), (0,1), (0,2), (1,0), ...
        assert doc["diags"][1] == [2.0, 3.0]
        assert doc["diags"][3] == [6.0, 7.0]

    def test_from_dict_size_mismatch(self):
        doc = new_vvma(2, 1, 1, "ones").to_dict()
        doc["M"] = [1.0, 2.0]
        with pytest.raises(ValueError):
            VvmaParam.from_dict(doc)


class TestExpand:
    def test_scalar_blocks(self):
        a = 3.0
        d = np.array([[2.0, -1.0], [0.5, 4.0]])
        p = VvmaParam([[a]], d[:, :, None])
        assert np.array_equal(expand(p), a * d)

    def test_no_diag_every_block_is_scaled_m(self):
        p = new_vvma(3, 2, 2, "normal", rng_seed=2, diag_enabled=False)
        E = expand(p)
        for i in range(2):
            for j in range(2):
                np.testing.assert_array_equal(E[i * 3:(i + 1) * 3, j * 3:(j + 1) * 3], 0.1 * p.M)

    def test_matches_blockwise_reference(self):
        p = random_param(4, 3, 2, 9)
        np.testing.assert_allclose(expand(p), dense_reference(p), rtol=0, atol=1e-14)

    def test_rank_at_most_k_without_diagonals(self):
        p = random_param(4, 3, 3, 4, diag_enabled=False)
        s = np.linalg.svd(expand(p), compute_uv=False)
        assert s[4] <= 1e-8 * s[0]

    def test_rank_at_most_k_with_row_shared_diagonals(self):
        # diagonals that depend only on the column block j give
        # W = (ones(r) kron M) @ blockdiag(D_j), so rank <= k
        p = random_param(4, 3, 3, 4)
        shared = np.broadcast_to(p.diags[0:1], p.diags.shape)
        q = p.replace(diags=shared)
        s = np.linalg.svd(expand(q), compute_uv=False)
        assert s[4] <= 1e-8 * s[0]

    def test_generic_diagonals_exceed_rank_k(self):
        # with k = 1 the expansion is a * D for an arbitrary r x c grid D
        p = VvmaParam([[1.0]], np.eye(3)[:, :, None])
        assert np.linalg.matrix_rank(expand(p)) == 3
        q = random_param(4, 3, 3, 4)
        assert np.linalg.matrix_rank(expand(q)) == 12

    def test_no_diag_blocks_bit_identical(self):
        p = random_param(5, 3, 4, 8, diag_enabled=False)
        b = blocks(p)
        for i in range(3):
            for j in range(4):
                assert b[i, j].tobytes() == b[0, 0].tobytes()


class TestMatvec:
    def test_identity(self):
        p = VvmaParam(np.eye(2), np.ones((1, 1, 2)))
        np.testing.assert_array_equal(matvec(p, [3.0, 5.0]), [3.0, 5.0])

    def test_random_matches_dense(self):
        p = random_param(4, 2, 3, 3)
        x = np.random.default_rng(0).standard_normal(12)
        ref = expand(p) @ x
        np.testing.assert_allclose(matvec(p, x), ref, rtol=1e-10)

    def test_annihilating_diagonal(self):
        p = VvmaParam(np.arange(9.0).reshape(3, 3), np.zeros((1, 1, 3)))
        assert np.array_equal(matvec(p, [1.0, 2.0, 3.0]), np.zeros(3))

    def test_batch(self):
        p = random_param(3, 2, 2, 1)
        X = np.random.default_rng(1).standard_normal((6, 5))
        np.testing.assert_allclose(matvec(p, X), expand(p) @ X, rtol=1e-12, atol=1e-12)

    def test_length_mismatch(self):
        p = random_param(3, 2, 2, 1)
        with pytest.raises(ValueError):
            matvec(p, np.ones(5))

    @settings(max_examples=60, deadline=None)
    @given(k=st.sampled_from([1, 2, 4, 8, 32]), r=st.sampled_from([1, 2, 3, 8]),
           c=st.sampled_from([1, 2, 3, 8]), seed=st.integers(0, 2**32 - 1),
           diag=st.booleans())
    def test_equivalence_property(self, k, r, c, seed, diag):
        p = random_param(k, r, c, seed, diag_enabled=diag)
        x = np.random.default_rng(seed).standard_normal(c * k)
        ref = expand(p) @ x
        err = np.abs(matvec(p, x) - ref).max()
        assert err <= 1e-10 * (1 + np.abs(ref).max())

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(-10, 10), beta=st.floats(-10, 10))
    def test_linearity(self, seed, alpha, beta):
        p = random_param(4, 3, 2, seed)
        g = np.random.default_rng(seed)
        x, y = g.standard_normal(8), g.standard_normal(8)
        lhs = matvec(p, alpha * x + beta * y)
        rhs = alpha * matvec(p, x) + beta * matvec(p, y)
        assert np.abs(lhs - rhs).max() <= 1e-10 * (1 + np.abs(rhs).max())


class TestCounts:
    def test_table_scale(self):
        p = new_vvma(128, 8, 8, "zeros")
        assert param_count(p) == 16_384 + 8_192 == 24_576

    def test_no_diag(self):
        p = new_vvma(32, 4, 4, "zeros", diag_enabled=False)
        assert param_count(p) == 1024

    def test_k32_16x16(self):
        assert param_count(new_vvma(32, 16, 16, "zeros")) == 1024 + 8192 == 9216

    @pytest.mark.parametrize("m,n,k,expected", [
        (1024, 1024, 32, (32, 32)),
        (100, 70, 32, (4, 3)),
        (1, 1, 32, (1, 1)),
    ])
    def test_pad_shape(self, m, n, k, expected):
        assert pad_shape(m, n, k) == expected

    def test_pad_shape_brute_force(self):
        for m in range(1, 40):
            for k in (1, 3, 7, 8):
                r, _ = pad_shape(m, 1, k)
                assert (r - 1) * k < m <= r * k

    def test_pad_matrix(self):
        W = np.ones((5, 3))
        P = pad_matrix(W, 4)
        assert P.shape == (8, 4)
        assert P.sum() == 15.0 and np.all(P[:5, :3] == 1.0)

    @settings(max_examples=50, deadline=None)
    @given(k=st.integers(2, 16), r=st.integers(1, 8), c=st.integers(1, 8))
    def test_compression_is_real(self, k, r, c):
        m, n = r * k, c * k
        if r * c > 1 and k < min(m, n):
            assert param_count(new_vvma(k, r, c, "zeros")) < m * n

    def test_k1_does_not_compress(self):
        # one scalar per block plus the shared scalar: 1 + r*c > m*n
        assert param_count(new_vvma(1, 2, 2, "zeros")) == 5 > 4
