import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank_ci.errors import DimensionError
from lowrank_ci.model import (
    Dataset,
    LowRankModel,
    ProblemDims,
    geometric_lambdas,
    make_model,
    random_orthonormal,
    rng_stream,
    sample_dataset,
)


def test_problem_dims():
    d = ProblemDims(50, 40, 4, 100)
    assert d.m_bar == 50 and d.m_star == 82
    with pytest.raises(ValueError):
        ProblemDims(5, 5, 5, 10)
    with pytest.raises(ValueError):
        ProblemDims(5, 5, 0, 10)
    with pytest.raises(ValueError):
        ProblemDims(5, 5, 1, 0)


def test_random_orthonormal_contract():
    q = random_orthonormal(2, 2, rng_stream(3))
    assert np.linalg.norm(q.T @ q - np.eye(2)) <= 1e-12
    np.testing.assert_array_equal(q, random_orthonormal(2, 2, rng_stream(3)))
    with pytest.raises(DimensionError):
        random_orthonormal(2, 3, rng_stream(3))


def test_random_orthonormal_sphere_marginals():
    m = 5000
    draws = np.concatenate([random_orthonormal(m, 1, rng_stream(11, k)).ravel() for k in range(100)])
    assert abs(draws.var() * m - 1.0) <= 0.10


def test_random_orthonormal_positive_r_diagonal():
    q = random_orthonormal(6, 3, rng_stream(5))
    # same stream, same Gaussian draw: q' g is the R factor
    g = rng_stream(5).standard_normal((6, 3))
    r = q.T @ g
    assert np.all(np.diag(r) > 0)
    assert np.allclose(np.tril(r, -1), 0, atol=1e-12)


def test_make_model_geometric():
    m = make_model(ProblemDims(10, 10, 4, 5), "geometric", 0.5, rng_stream(1))
    np.testing.assert_array_equal(m.lambdas, [16, 8, 4, 2])
    np.testing.assert_array_equal(geometric_lambdas(1), [2])
    assert m.beta == pytest.approx(0.25)
    assert m.inv_lambda_fro2 == pytest.approx(85 / 256)
    assert m.inv_lambda2_fro == pytest.approx(np.sqrt(4369 / 65536))


def test_make_model_explicit():
    m = make_model(ProblemDims(6, 6, 3, 5), [5, 5, 1], 1.0, rng_stream(1))
    np.testing.assert_array_equal(m.lambdas, [5, 5, 1])
    with pytest.raises(ValueError):
        make_model(ProblemDims(6, 6, 2, 5), [1, 5], 1.0, rng_stream(1))
    with pytest.raises(ValueError):
        make_model(ProblemDims(6, 6, 2, 5), [1], 1.0, rng_stream(1))
    with pytest.raises(ValueError):
        make_model(ProblemDims(6, 6, 2, 5), [2, 0], 1.0, rng_stream(1))


def test_model_is_frozen():
    m = make_model(ProblemDims(6, 6, 2, 5), "geometric", 1.0, rng_stream(1))
    with pytest.raises(ValueError):
        m.u[0, 0] = 1.0
    with pytest.raises(ValueError):
        LowRankModel(m.dims, 2 * m.u, m.v, m.lambdas, 1.0)


def test_sample_noiseless():
    dims = ProblemDims(4, 3, 1, 20)
    m = make_model(dims, [1.0], 0.0, rng_stream(2))
    d = sample_dataset(m, rng_stream(3))
    np.testing.assert_allclose(d.y, np.einsum("kij,ij->k", d.x, m.matrix), atol=1e-14)
    zero = LowRankModel(dims, m.u, m.v, [1e-300], 0.0)
    assert np.all(np.abs(sample_dataset(zero, rng_stream(3)).y) < 1e-290)


def test_sample_variance_pure_noise():
    dims = ProblemDims(3, 3, 1, 10000)
    m = make_model(dims, [1e-12], 1.0, rng_stream(4))
    y = sample_dataset(m, rng_stream(5)).y
    assert abs(y.var() - 1.0) <= 0.03


def test_sample_moments():
    dims = ProblemDims(4, 4, 2, 10000)
    m = make_model(dims, [1.0, 0.5], 0.3, rng_stream(6))
    y = sample_dataset(m, rng_stream(7)).y
    n = y.size
    var = np.sum(m.matrix**2) + 0.3**2
    assert abs(y.mean()) <= 3 * np.sqrt(var / n)
    # Var of the sample variance of a Gaussian is 2 var^2 / (n - 1)
    assert abs(y.var(ddof=1) - var) <= 3 * var * np.sqrt(2 / (n - 1))


def test_streams_reproducible_and_distinct():
    a = rng_stream(9, 1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, rng_stream(9, 1, 2).standard_normal(5))
    assert not np.array_equal(a, rng_stream(9, 1, 3).standard_normal(5))
    with pytest.raises(ValueError):
        rng_stream(-1)


def test_streams_uncorrelated():
    k = 200
    draws = np.stack([rng_stream(42, 1, j).standard_normal(2000) for j in range(k)])
    corr = np.corrcoef(draws)
    off = corr[~np.eye(k, dtype=bool)]
    # each off-diagonal correlation has sd ~ 1/sqrt(2000)
    assert np.abs(off).max() <= 5 / np.sqrt(2000)
    lag = np.mean([np.corrcoef(d[:-1], d[1:])[0, 1] for d in draws])
    assert abs(lag) <= 4 / np.sqrt(2000 * k)


def test_dataset_validation_and_halves():
    x = np.arange(24.0).reshape(4, 2, 3)
    d = Dataset(x, np.arange(4.0))
    assert d.n == 2 and d.shape == (2, 3)
    x1, y1 = d.first_half()
    x2, y2 = d.second_half()
    np.testing.assert_array_equal(y1, [0, 1])
    np.testing.assert_array_equal(y2, [2, 3])
    with pytest.raises(ValueError):
        d.y[0] = 1.0
    s = d.swapped()
    np.testing.assert_array_equal(s.y, [2, 3, 0, 1])
    np.testing.assert_array_equal(s.x[0], x[2])
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        Dataset(np.zeros((0, 2, 2)), np.zeros(0))
    with pytest.raises(DimensionError):
        Dataset(np.zeros((4, 2, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.full((2, 1, 1), np.inf), np.zeros(2))


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(0, 10**6))
def test_sample_shapes(m1, m2, seed):
    dims = ProblemDims(m1, m2, 1, 3)
    m = make_model(dims, "geometric", 0.1, rng_stream(seed))
    d = sample_dataset(m, rng_stream(seed, 1))
    assert d.x.shape == (6, m1, m2) and d.y.shape == (6,)
    assert d.split == 3
