import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tensordeli.completion import AdaptiveMCConfig, NNMConfig, adaptive_complete, merge_observations, nnm_complete
from tensordeli.errors import RankOverflowError
from tensordeli.sampling import SliceView, dense_oracle
from tensordeli.tensor import DenseTensor, coherence


def matrix_view(M):
    oracle = dense_oracle(DenseTensor(M))
    return SliceView(oracle), oracle


def low_rank(n1, n2, r, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n1, r)) @ rng.standard_normal((r, n2))


class TestAdaptive:
    def test_probe_count_formula(self):
        cfg = AdaptiveMCConfig(mu0=2.0, r=3, delta=0.1, C=1.0)
        assert cfg.probe_count(1000) == int(np.ceil(2 * 3 * np.log(30)))
        assert cfg.probe_count(10) == 10
        assert AdaptiveMCConfig(mu0=2.0, r=3, gamma=0.1).probe_count(100) == 10
        assert AdaptiveMCConfig(mu0=2.0, r=3, gamma=0.01).probe_count(100) == 3

    def test_zero_matrix(self):
        view, oracle = matrix_view(np.zeros((10, 8)))
        cfg = AdaptiveMCConfig(mu0=1.0, r=2, delta=0.5, C=1.0)
        res = adaptive_complete(view, cfg, seed=0)
        w = cfg.probe_count(10)
        assert w < 10
        assert np.array_equal(res.matrix, np.zeros((10, 8)))
        assert res.basis_columns == []
        assert oracle.ledger.total == 8 * w

    def test_rank_one_exact(self):
        M = low_rank(20, 20, 1, seed=3)
        mu0 = max(coherence(M), 1.0)
        view, oracle = matrix_view(M)
        cfg = AdaptiveMCConfig(mu0=mu0, r=1, C=1.0)
        res = adaptive_complete(view, cfg, seed=1)
        assert np.max(np.abs(res.matrix - M)) <= 1e-8
        assert oracle.ledger.total <= cfg.probe_count(20) * 20 + 20

    def test_rank_three_recovery_rate(self):
        ok = 0
        for seed in range(100):
            M = low_rank(20, 25, 3, seed)
            mu0 = coherence(M)
            if mu0 > 3:
                mu0 = 3.0
            view, _ = matrix_view(M)
            res = adaptive_complete(view, AdaptiveMCConfig(mu0=mu0, r=3, delta=0.05), seed=seed)
            ok += np.max(np.abs(res.matrix - M)) <= 1e-8 * np.max(np.abs(M))
        assert ok >= 95

    def test_small_probes_still_exact(self):
        M = low_rank(60, 40, 2, seed=9)
        view, oracle = matrix_view(M)
        cfg = AdaptiveMCConfig(mu0=1.0, r=2, C=1.0, delta=0.05)
        res = adaptive_complete(view, cfg, seed=2)
        assert cfg.probe_count(60) < 60
        assert np.allclose(res.matrix, M, atol=1e-8)
        assert oracle.ledger.total < 60 * 40

    def test_rank_overflow(self):
        view, _ = matrix_view(low_rank(10, 10, 3, seed=0))
        with pytest.raises(RankOverflowError):
            adaptive_complete(view, AdaptiveMCConfig(mu0=1.0, r=2), seed=0)

    @given(seed=st.integers(0, 10_000), r=st.integers(1, 3), C=st.sampled_from([0.5, 1.0, 8.0]))
    def test_span_and_sample_ceiling(self, seed, r, C):
        n1, n2 = 15, 12
        M = low_rank(n1, n2, r, seed)
        view, oracle = matrix_view(M)
        cfg = AdaptiveMCConfig(mu0=1.0, r=r, C=C)
        res = adaptive_complete(view, cfg, seed=seed)
        assert len(res.basis_columns) <= r
        assert oracle.ledger.total <= cfg.probe_count(n1) * n2 + r * n1
        assert oracle.ledger.total == res.samples
        B = res.matrix[:, res.basis_columns]
        coeff, *_ = np.linalg.lstsq(B, res.matrix, rcond=None)
        resid = np.linalg.norm(res.matrix - B @ coeff, axis=0)
        assert np.all(resid <= 1e-8 * np.maximum(np.linalg.norm(res.matrix, axis=0), 1e-300))


def test_row_sampling_reaches_full_rank():
    """Keeping rows of an orthonormal basis with probability mu r log(r/delta)/n keeps full rank."""
    rng = np.random.default_rng(0)
    n, r, delta = 100, 4, 0.01
    Z, _ = np.linalg.qr(rng.standard_normal((n, r)))
    mu = coherence(Z)
    p = min(1.0, mu * r * np.log(r / delta) / n)
    trials = 2000
    full = sum(np.linalg.matrix_rank(Z[rng.random(n) < p]) == r for _ in range(trials))
    rate = full / trials
    stderr = np.sqrt(0.99 * 0.01 / trials)
    assert rate >= 0.99 - 3 * stderr


class TestNNM:
    def test_full_observation_exact(self):
        M = low_rank(8, 9, 2, seed=1)
        i, j = np.nonzero(np.ones_like(M, dtype=bool))
        res = nnm_complete((i, j, M[i, j]), M.shape)
        assert np.max(np.abs(res.matrix - M)) <= 1e-8
        assert res.converged

    def test_rank_one_half_mask(self):
        M = low_rank(30, 30, 1, seed=4)
        mask = np.random.default_rng(5).random(M.shape) < 0.5
        i, j = np.nonzero(mask)
        res = nnm_complete((i, j, M[i, j]), M.shape)
        assert np.linalg.norm(res.matrix - M) / np.linalg.norm(M) <= 1e-4
        assert np.array_equal(res.matrix[mask], M[mask])

    def test_rank_two_theory_rate(self):
        ok = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            U, V = rng.standard_normal((40, 2)), rng.standard_normal((40, 2))
            M = U @ V.T
            mu0 = max(coherence(U), coherence(V))
            p = min(1.0, 2 * mu0 * 2 * np.log(80) ** 2 / 40)
            mask = rng.random(M.shape) < p
            i, j = np.nonzero(mask)
            res = nnm_complete((i, j, M[i, j]), M.shape)
            ok += np.linalg.norm(res.matrix - M) / np.linalg.norm(M) <= 1e-4
        assert ok >= 9

    def test_rank_two_half_mask(self):
        ok = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            M = low_rank(40, 40, 2, seed)
            mask = rng.random(M.shape) < 0.5
            i, j = np.nonzero(mask)
            res = nnm_complete((i, j, M[i, j]), M.shape)
            ok += np.linalg.norm(res.matrix - M) / np.linalg.norm(M) <= 1e-4
        assert ok >= 9

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    @pytest.mark.parametrize("seed, p", [(6, 0.6), (8, 0.4), (9, 0.8)])
    def test_fixed_point_residual_non_increasing(self, seed, p):
        M = low_rank(25, 20, 2, seed=seed)
        mask = np.random.default_rng(seed).random(M.shape) < p
        i, j = np.nonzero(mask)
        res = nnm_complete((i, j, M[i, j]), M.shape, NNMConfig(max_iters=2000))
        h = np.array(res.fixed_point_residuals)
        assert np.all(np.diff(h) <= 1e-12 * h[0])

    def test_non_convergence_flag(self):
        M = low_rank(20, 20, 2, seed=7)
        mask = np.random.default_rng(7).random(M.shape) < 0.5
        i, j = np.nonzero(mask)
        with pytest.warns(RuntimeWarning):
            res = nnm_complete((i, j, M[i, j]), M.shape, NNMConfig(max_iters=3))
        assert not res.converged
        assert res.iterations == 3

    def test_zero_data(self):
        res = nnm_complete([(0, 0, 0.0), (1, 2, 0.0)], (3, 3))
        assert not res.matrix.any()

    def test_duplicates(self):
        rows, cols, vals = merge_observations([(0, 1, 2.0), (0, 1, 2.0), (1, 0, 3.0)], (2, 2))
        assert rows.tolist() == [0, 1] and vals.tolist() == [2.0, 3.0]
        with pytest.raises(ValueError):
            merge_observations([(0, 1, 2.0), (0, 1, 2.5)], (2, 2))
        with pytest.raises(IndexError):
            merge_observations([(2, 0, 1.0)], (2, 2))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NNMConfig(tol=0)
        with pytest.raises(ValueError):
            NNMConfig(relaxation=2.5)

    def test_no_warning_when_converged(self):
        M = low_rank(10, 10, 1, seed=2)
        mask = np.random.default_rng(2).random(M.shape) < 0.7
        i, j = np.nonzero(mask)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert nnm_complete((i, j, M[i, j]), M.shape).converged
