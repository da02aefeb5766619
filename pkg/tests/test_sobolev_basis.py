"""Basis construction checks: analytic orthonormality, the Cholesky oracle,
parity sparsity, quadrature cross-validation, and cube sampling moments."""

import math

import numpy as np
import pytest

from oplearn.errors import ContractError
from oplearn.hermite import gram_matrix, hermite_matrix
from oplearn.sobolev_basis import (BasisSet, CompactSetSpec, FunctionElement,
                                   build_basis, evaluate, evaluate_many,
                                   sample_compact, w12_inner)


@pytest.fixture(scope="module")
def basis5():
    return build_basis(5)


def test_single_element_normalization():
    b = build_basis(1)
    assert b.transform[0, 0] == pytest.approx(1.0 / math.sqrt(1.0 + math.pi),
                                              rel=1e-14)


@pytest.mark.parametrize("n", [1, 2, 5, 12, 64])
def test_transform_whitens_gram(n):
    b = build_basis(n)
    identity = b.transform @ b.gram @ b.transform.T
    assert np.max(np.abs(identity - np.eye(n))) < 1e-10


def test_transform_lower_triangular_positive_diagonal():
    b = build_basis(12)
    assert np.allclose(b.transform, np.tril(b.transform))
    assert np.all(np.diag(b.transform) > 0)


def test_matches_cholesky_oracle():
    # T G T^t = I with T lower triangular and positive diagonal forces
    # T = L^{-1} for G = L L^t, so the two routes must agree elementwise
    for n in (3, 5, 16):
        b = build_basis(n)
        t_chol = np.linalg.inv(np.linalg.cholesky(gram_matrix(n)))
        np.testing.assert_allclose(b.transform, t_chol, rtol=1e-9, atol=1e-12)


def test_second_element_is_pure_order_one(basis5):
    # even/odd Hermite orders never couple, so row 1 touches order 1 only
    row = basis5.transform[1]
    assert row[1] > 0
    assert row[0] == 0.0
    assert np.all(row[2:] == 0.0)


def test_parity_checkerboard():
    b = build_basis(10)
    for k in range(10):
        for m in range(10):
            if (k - m) % 2 == 1:
                assert b.transform[k, m] == 0.0


def test_evaluate_zero_function(basis5):
    fe = FunctionElement(np.zeros(5))
    assert evaluate(basis5, fe, 1.7) == 0.0


def test_evaluate_first_element_at_origin(basis5):
    fe = FunctionElement(np.array([1.0, 0, 0, 0, 0]))
    expected = 2.0 ** 0.25 / math.sqrt(1.0 + math.pi)
    assert evaluate(basis5, fe, 0.0) == pytest.approx(expected, rel=1e-14)


def test_evaluate_matches_direct_sum(basis5):
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = rng.uniform(-5, 5, 5)
        x = rng.uniform(-3, 3)
        h = hermite_matrix(x, 4)
        direct = sum(a[k] * (basis5.transform[k] @ h) for k in range(5))
        assert evaluate(basis5, FunctionElement(a), x) == pytest.approx(
            direct, rel=1e-12, abs=1e-13)


def test_evaluate_dimension_mismatch(basis5):
    with pytest.raises(ContractError):
        evaluate(basis5, FunctionElement(np.zeros(4)), 0.0)


def test_evaluate_many_shapes(basis5):
    rng = np.random.default_rng(3)
    coeffs = rng.uniform(-5, 5, (4, 5))
    grid = np.linspace(-2, 2, 9)
    shared = evaluate_many(basis5, coeffs, grid)
    assert shared.shape == (4, 9)
    per_record = evaluate_many(basis5, coeffs, np.tile(grid, (4, 1)))
    np.testing.assert_allclose(per_record, shared, rtol=1e-13, atol=1e-15)
    for r in range(4):
        for p, x in enumerate(grid):
            assert shared[r, p] == pytest.approx(
                evaluate(basis5, FunctionElement(coeffs[r]), float(x)),
                rel=1e-13, abs=1e-14)


def test_basis_quadrature_orthonormality(basis5):
    # joint validation of the Hermite kernels, the transform, and evaluate
    x = np.linspace(-12.0, 12.0, 20001)
    dx = x[1] - x[0]
    vals = hermite_matrix(x, 5)
    m = np.arange(5)
    lower = np.concatenate([np.zeros((len(x), 1)), vals[:, :4]], axis=1)
    derivs = np.sqrt(np.pi * m) * lower - np.sqrt(np.pi * (m + 1)) * vals[:, 1:]
    e_vals = vals[:, :5] @ basis5.transform.T
    e_derivs = derivs @ basis5.transform.T
    w = np.ones(len(x))
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    for i in range(5):
        for j in range(5):
            integrand = e_vals[:, i] * e_vals[:, j] + e_derivs[:, i] * e_derivs[:, j]
            integral = float(w @ integrand) * dx / 3.0
            assert integral == pytest.approx(1.0 if i == j else 0.0, abs=1e-6)


def test_w12_inner_orthonormal_pairs(basis5):
    e1 = FunctionElement(np.eye(5)[0])
    e3 = FunctionElement(np.eye(5)[2])
    assert w12_inner(e1, e1) == 1.0
    assert w12_inner(e1, e3) == 0.0


def test_w12_inner_matches_quadrature(basis5):
    rng = np.random.default_rng(23)
    a = rng.uniform(-5, 5, 5)
    x = np.linspace(-12.0, 12.0, 20001)
    dx = x[1] - x[0]
    vals = hermite_matrix(x, 5)
    m = np.arange(5)
    lower = np.concatenate([np.zeros((len(x), 1)), vals[:, :4]], axis=1)
    derivs = np.sqrt(np.pi * m) * lower - np.sqrt(np.pi * (m + 1)) * vals[:, 1:]
    hc = basis5.hermite_coeffs(a)
    f = vals[:, :5] @ hc
    fp = derivs @ hc
    w = np.ones(len(x))
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    quad = float(w @ (f * f + fp * fp)) * dx / 3.0
    fe = FunctionElement(a)
    assert w12_inner(fe, fe) == pytest.approx(quad, abs=1e-6)


def test_w12_inner_length_mismatch():
    with pytest.raises(ContractError):
        w12_inner(FunctionElement(np.zeros(5)), FunctionElement(np.zeros(4)))


def test_sample_compact_moments():
    spec = CompactSetSpec(n_basis=5, bound=5.0)
    rng = np.random.default_rng(99)
    draws = rng.uniform(-spec.bound, spec.bound, size=(10**6, spec.n_basis))
    # the generator draws coordinates the same way; spot-check through the API
    fe = sample_compact(spec, np.random.default_rng(99))
    np.testing.assert_array_equal(fe.coeffs, draws[0])
    mean = draws.mean(axis=0)
    var = draws.var(axis=0)
    assert np.all(np.abs(mean) < 0.02)
    assert np.all(np.abs(var - 25.0 / 3.0) < 0.01 * 25.0 / 3.0)


def test_sample_compact_zero_bound():
    spec = CompactSetSpec(n_basis=5, bound=0.0)
    fe = sample_compact(spec, np.random.default_rng(1))
    np.testing.assert_array_equal(fe.coeffs, np.zeros(5))


def test_sample_compact_deterministic():
    spec = CompactSetSpec()
    a = [sample_compact(spec, np.random.default_rng(42)).coeffs
         for _ in range(1)]
    b = [sample_compact(spec, np.random.default_rng(42)).coeffs
         for _ in range(1)]
    np.testing.assert_array_equal(a[0], b[0])


def test_sample_compact_range():
    spec = CompactSetSpec(n_basis=5, bound=2.5)
    rng = np.random.default_rng(5)
    for _ in range(200):
        fe = sample_compact(spec, rng)
        assert np.all(np.abs(fe.coeffs) <= 2.5)


def test_coefficient_norm_is_w12_norm(basis5):
    # ||a||^2 against the quadrature norm is covered above; here the identity
    rng = np.random.default_rng(8)
    a = rng.uniform(-1, 1, 5)
    fe = FunctionElement(a)
    assert w12_inner(fe, fe) == pytest.approx(float(a @ a), rel=1e-15)


def test_function_element_rejects_nonfinite():
    with pytest.raises(ContractError):
        FunctionElement(np.array([1.0, np.nan, 0.0]))
