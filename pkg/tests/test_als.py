import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_cp
from tensordeli.als import ALSConfig, masked_als, masked_als_detailed, masked_objective, masked_svd_init
from tensordeli.tensor import CPDecomposition, canonicalize, factor_match_error, materialize


def observe(dec, frac, seed):
    X = materialize(dec).data
    mask = np.random.default_rng(seed).random(X.shape) < frac
    idx = np.argwhere(mask)
    return idx, X[tuple(idx.T)]


def perturb(dec, scale, seed):
    rng = np.random.default_rng(seed)
    return CPDecomposition.from_factors([A + scale * rng.standard_normal(A.shape) for A in dec.factors], dec.weights)


def test_truth_is_fixed_point():
    truth = random_cp((8, 7, 6), 3, seed=0)
    res = masked_als_detailed(observe(truth, 0.5, 1), truth, ALSConfig(iterations=5))
    assert max(res.objective) <= 1e-10


def test_zero_iterations_returns_canonical_init():
    truth = random_cp((5, 5, 5), 2, seed=1)
    out = masked_als(observe(truth, 0.5, 0), truth, ALSConfig(iterations=0))
    ref = canonicalize(truth)
    for A, B in zip(out.factors, ref.factors):
        assert np.allclose(A, B, atol=1e-15)
    assert np.allclose(out.weights, ref.weights)


@given(seed=st.integers(0, 10_000))
def test_objective_monotone(seed):
    truth = random_cp((7, 6, 5), 2, seed=seed)
    obs = observe(truth, 0.4, seed)
    res = masked_als_detailed(obs, perturb(truth, 0.3, seed + 1), ALSConfig(iterations=6))
    assert all(b <= a + 1e-12 for a, b in zip(res.objective, res.objective[1:]))


def test_unobserved_rows_keep_init():
    truth = random_cp((5, 5, 5), 2, seed=2)
    idx, vals = observe(truth, 1.0, 0)
    keep = idx[:, 0] != 4
    init = perturb(truth, 0.1, 3)
    res = masked_als_detailed((idx[keep], vals[keep]), init, ALSConfig(iterations=3))
    assert res.unobserved_rows == {0: [4]}


def test_rescale_invariance():
    truth = random_cp((6, 6, 6), 2, seed=4)
    obs = observe(truth, 0.6, 4)
    init = perturb(truth, 0.2, 5)
    scaled = CPDecomposition.from_factors(
        [init.factors[0] * 2.0, init.factors[1] * 0.25, init.factors[2]], init.weights * 2.0
    )
    a = masked_als(obs, init, ALSConfig(iterations=4))
    b = masked_als(obs, scaled, ALSConfig(iterations=4))
    assert factor_match_error(a, b) <= 1e-8


def test_masked_svd_full_observation_spans_factors():
    truth = random_cp((8, 7, 6), 2, seed=6)
    init = masked_svd_init(observe(truth, 1.0, 0), truth.shape, 2)
    for A, U in zip(truth.factors, init.factors):
        Q = np.linalg.qr(A)[0]
        cosines = np.linalg.svd(Q.T @ U, compute_uv=False)
        assert np.all(np.arccos(np.clip(cosines, -1, 1)) <= 1e-6)


def test_masked_svd_empty_observation():
    empty = (np.zeros((0, 3), dtype=int), np.zeros(0))
    a = masked_svd_init(empty, (4, 4, 4), 2)
    b = masked_svd_init(empty, (4, 4, 4), 2)
    assert all(np.array_equal(x, y) for x, y in zip(a.factors, b.factors))
    assert all(np.all(np.isfinite(x)) for x in a.factors)


def test_masked_svd_then_als_converges():
    hits = 0
    for seed in range(10):
        truth = random_cp((10, 10, 10), 2, seed=seed)
        obs = observe(truth, 0.5, seed)
        init = masked_svd_init(obs, truth.shape, 2)
        res = masked_als_detailed(obs, init, ALSConfig(iterations=60))
        hits += res.objective[-1] / float(obs[1] @ obs[1]) <= 1e-6
    assert hits >= 8


def test_config_validation():
    with pytest.raises(ValueError):
        ALSConfig(iterations=-1)
    with pytest.raises(ValueError):
        ALSConfig(init="random")


def test_objective_matches_dense():
    truth = random_cp((4, 5, 6), 2, seed=7)
    idx, vals = observe(truth, 0.5, 1)
    assert masked_objective(list(truth.factors[:2]) + [truth.factors[2] * truth.weights], idx, vals) <= 1e-20
