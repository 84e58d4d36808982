import numpy as np
import pytest
import scipy.sparse as sps

from paralpha.krylov import ShiftedOperator, gmres
from paralpha.problems import heat_operator


def test_zero_shift_identity():
    rhs = np.arange(5) + 1j
    x, stats = gmres(ShiftedOperator(sps.identity(5), 0.0), rhs, tol=1e-12)
    assert stats.converged and stats.iterations <= 1
    np.testing.assert_allclose(x, rhs)


def test_shifted_operator_on_basis_vector():
    a = sps.random(6, 6, density=0.5, random_state=0, format="csr")
    op = ShiftedOperator(a, 0.3 - 0.1j)
    e = np.zeros(6)
    e[2] = 1.0
    np.testing.assert_allclose(op @ e, e - (0.3 - 0.1j) * a.toarray()[:, 2])


def test_diagonal_closed_form():
    rng = np.random.default_rng(0)
    diag = rng.uniform(-5, 0, 40)
    rhs = rng.standard_normal(40) + 1j * rng.standard_normal(40)
    s = 0.2 + 0.05j
    x, stats = gmres(ShiftedOperator(sps.diags(diag), s), rhs, tol=1e-12)
    assert stats.converged
    np.testing.assert_allclose(x, rhs / (1 - s * diag), rtol=1e-10)


def test_heat_against_dense_solve():
    a = heat_operator(16, 2)
    rhs = np.random.default_rng(2).standard_normal(256) + 0j
    op = ShiftedOperator(a, -0.01)
    x, stats = gmres(op, rhs, tol=1e-12)
    dense = np.linalg.solve(np.eye(256) + 0.01 * a.toarray(), rhs)
    assert stats.converged
    assert np.linalg.norm(x - dense) <= 1e-10 * np.linalg.norm(dense)
    assert stats.residual == pytest.approx(np.linalg.norm(rhs - op @ x) / np.linalg.norm(rhs))


def test_history_monotone_and_consistent():
    a = heat_operator(16, 4)
    rhs = np.random.default_rng(5).standard_normal(256) + 0j
    op = ShiftedOperator(a, -0.02 + 0.01j)
    x, stats = gmres(op, rhs, tol=1e-11, restart=200)
    assert all(b <= a_ * (1 + 1e-12) for a_, b in zip(stats.history, stats.history[1:]))
    true = np.linalg.norm(rhs - op @ x) / np.linalg.norm(rhs)
    assert abs(true - stats.history[-1]) <= 1e3 * np.finfo(float).eps + 1e-2 * true


def test_nonconvergence_reported():
    a = heat_operator(16, 2)
    rhs = np.random.default_rng(3).standard_normal(256) + 0j
    x, stats = gmres(ShiftedOperator(a, -1.0), rhs, tol=1e-14, max_iter=3, restart=3)
    assert not stats.converged and stats.iterations == 3
    assert stats.residual > 1e-14


def test_restarted_converges():
    a = heat_operator(16, 2)
    rhs = np.random.default_rng(4).standard_normal(256) + 0j
    x, stats = gmres(ShiftedOperator(a, -0.0005), rhs, tol=1e-10, restart=10)
    assert stats.converged and stats.residual <= 1e-10


def test_rejects_bad_input():
    op = ShiftedOperator(sps.identity(3), 0.1)
    with pytest.raises(ValueError):
        gmres(op, np.array([1.0, np.nan, 0.0]))
    with pytest.raises(ValueError):
        gmres(op, np.ones(3), tol=0.0)


def test_zero_rhs():
    x, stats = gmres(ShiftedOperator(sps.identity(3), 0.1), np.zeros(3))
    assert stats.converged and not np.any(x)
