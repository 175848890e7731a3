import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsefactor.distributions import RngHandle
from sparsefactor.model import (
    FactorModelParams,
    TruthSpec,
    assemble_cov,
    check_a3,
    draw_sparse_loadings,
    frobenius_truth,
    generate_truth,
    orthogonal_sparse_loadings,
    simulate_dataset,
)


def test_params_validation():
    with pytest.raises(ValueError):
        FactorModelParams(np.ones((2, 3)), 1.0)
    with pytest.raises(ValueError):
        FactorModelParams(np.ones((3, 1)), 0.0)
    with pytest.raises(ValueError):
        TruthSpec(10, 2, 0)
    with pytest.raises(ValueError):
        TruthSpec(10, 2, 3, sigma2_true=50.0)


def test_dense_truth_column_norms():
    p = 400
    truth, c = generate_truth(TruthSpec(p, 3, p, seed=1))
    assert c == p
    norms = np.linalg.norm(truth.loadings, axis=0)
    # chi-square(p) concentration: |norm^2 / p - 1| is O(sqrt(2 / p))
    assert np.all(np.abs(norms**2 / p - 1.0) < 4 * math.sqrt(2.0 / p))


def test_unconditioned_sparse_draw_has_binomial_count():
    p, k, s = 400, 3, 6
    counts = np.array([
        np.count_nonzero(draw_sparse_loadings(p, k, s, RngHandle(seed).generator), axis=0).mean()
        for seed in range(200)
    ])
    assert abs(counts.mean() - s) < 3 * counts.std(ddof=1) / math.sqrt(counts.size)


@pytest.mark.xfail(strict=True, reason="acceptance conditioning on the deviation bound inflates the nonzero count")
def test_generated_truth_has_binomial_count():
    p, k, s = 400, 3, 6
    counts = []
    for seed in range(200):
        truth, _ = generate_truth(TruthSpec(p, k, s, seed=seed, max_retries=20000))
        counts.append(np.count_nonzero(truth.loadings, axis=0).mean())
    counts = np.array(counts)
    assert abs(counts.mean() - s) < 3 * counts.std(ddof=1) / math.sqrt(counts.size)


@pytest.mark.parametrize("seed", range(5))
def test_generated_truth_meets_deviation_bound(seed):
    spec = TruthSpec(200, 3, 6, seed=seed, max_retries=20000)
    truth, c = generate_truth(spec)
    assert check_a3(truth.loadings, c) <= 3 * math.sqrt(3 / 200)


def test_generate_truth_deterministic():
    spec = TruthSpec(100, 2, 5, seed=9, max_retries=20000)
    assert np.array_equal(generate_truth(spec)[0].loadings, generate_truth(spec)[0].loadings)


def test_generate_truth_reports_deviation_when_budget_exhausted():
    with pytest.raises(RuntimeError, match="best achieved"):
        generate_truth(TruthSpec(1000, 3, 7, seed=0, max_retries=1, a3_constant=0.01))


def test_check_a3_examples():
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((10, 3)))
    assert check_a3(math.sqrt(4.0) * q, 4.0) == pytest.approx(0.0, abs=1e-12)
    assert check_a3(np.zeros((10, 3)), 2.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        check_a3(q, 0.0)


@pytest.mark.xfail(strict=True, reason="at p=1000 the raw spike-and-normal draw meets 3 sqrt(k/p) in about 1% of seeds")
def test_check_a3_random_sparse_frequency_p1000():
    p, k = 1000, 3
    s = math.ceil(math.log(p))
    ok = sum(
        check_a3(draw_sparse_loadings(p, k, s, RngHandle(seed).generator), s) <= 3 * math.sqrt(k / p)
        for seed in range(100)
    )
    assert ok >= 95


def test_assemble_cov_examples():
    cov = assemble_cov(FactorModelParams(np.array([[1.0], [0.0]]), 1.0))
    np.testing.assert_array_equal(cov.to_dense(), [[2.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(assemble_cov(FactorModelParams(np.zeros((3, 1)), 0.4)).to_dense(), 0.4 * np.eye(3))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(2, 30), k=st.integers(1, 3), s2=st.floats(0.01, 10))
def test_assemble_cov_spd(seed, p, k, s2):
    lam = np.random.default_rng(seed).standard_normal((p, min(k, p)))
    dense = assemble_cov(FactorModelParams(lam, s2)).to_dense()
    assert np.array_equal(dense, dense.T)
    assert np.linalg.eigvalsh(dense)[0] >= s2 - 1e-12 * max(1.0, np.abs(dense).max())


def test_frobenius_truth_band():
    truth = frobenius_truth(5, 2, 0.5, 100, seed=3)
    assert truth.loadings.shape == (5, 2)
    with pytest.raises(ValueError):
        frobenius_truth(5, 2, 0.1, 100, seed=3)  # below 1 / log n
    with pytest.raises(ValueError):
        frobenius_truth(5, 2, 20.0, 100, seed=3)


def test_orthogonal_sparse_loadings():
    lam = orthogonal_sparse_loadings(50, 3, 6, 4.0, np.random.default_rng(1))
    np.testing.assert_allclose(lam.T @ lam, 4.0 * np.eye(3), atol=1e-12)
    assert np.all(np.count_nonzero(lam, axis=0) == 6)
    with pytest.raises(ValueError):
        orthogonal_sparse_loadings(10, 3, 4, 1.0, np.random.default_rng(1))


def test_simulate_dataset_reproducible():
    params = FactorModelParams(np.ones((4, 1)), 1.0)
    a = simulate_dataset(params, 7, RngHandle(5).generator)
    b = simulate_dataset(params, 7, RngHandle(5).generator)
    assert a.shape == (7, 4) and np.array_equal(a, b)
