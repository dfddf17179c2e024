import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfnet.elastic_net import (ElasticNetError, ElasticNetParams, SparseCode, kkt_residual, objective,
                               oracle_solve, solve, solve_batch)

from conftest import unit_dictionary

TINY = 1e-12  # stands in for lambda2 -> 0


@pytest.mark.parametrize("solver", [solve, oracle_solve])
def test_orthonormal_dictionary_soft_thresholds(solver):
    code = solver(np.array([1.0, 0.2]), np.eye(2), ElasticNetParams(0.5, TINY))
    np.testing.assert_allclose(code.alpha, [0.5, 0.0], atol=1e-9)
    assert list(code.support) == [0]


@pytest.mark.parametrize("solver", [solve, oracle_solve])
def test_soft_threshold_with_ridge(solver):
    code = solver(np.array([1.0, 0.2]), np.eye(2), ElasticNetParams(0.5, 0.1))
    np.testing.assert_allclose(code.alpha, [0.5 / 1.1, 0.0], atol=1e-9)


@pytest.mark.parametrize("solver", [solve, oracle_solve])
def test_zero_threshold(solver, rng):
    P = unit_dictionary(rng, 8, 12)
    x = rng.standard_normal(8)
    code = solver(x, P, ElasticNetParams(np.abs(P.T @ x).max(), 0.01))
    assert code.support.size == 0
    assert not code.alpha.any()


def test_ridge_closed_form(rng):
    P = rng.standard_normal((6, 6))
    x = rng.standard_normal(6)
    params = ElasticNetParams(0.0, 0.01)
    expected = np.linalg.solve(P.T @ P + 0.01 * np.eye(6), P.T @ x)
    np.testing.assert_allclose(oracle_solve(x, P, params).alpha, expected, atol=1e-8)
    np.testing.assert_allclose(solve(x, P, params).alpha, expected, atol=1e-8)


def test_random_instance_matches_oracle(rng):
    P = unit_dictionary(rng, 8, 12)
    x = rng.standard_normal(8)
    params = ElasticNetParams(0.15, 0.01)
    np.testing.assert_allclose(solve(x, P, params).alpha, oracle_solve(x, P, params).alpha, atol=1e-5)


def test_kkt_zero_at_zero_solution(rng):
    P = unit_dictionary(rng, 5, 7)
    x = rng.standard_normal(5)
    params = ElasticNetParams(np.abs(P.T @ x).max() + 0.1, 0.01)
    assert kkt_residual(SparseCode(np.zeros(7), x), x, P, params) == 0.0


def test_kkt_detects_perturbation(rng):
    P = unit_dictionary(rng, 8, 12)
    x = rng.standard_normal(8)
    params = ElasticNetParams(0.15, 0.01)
    code = solve(x, P, params)
    assert kkt_residual(code, x, P, params) <= params.tolerance
    j = code.support[0]
    bumped = code.alpha.copy()
    bumped[j] += 1e-3
    r = kkt_residual(SparseCode(bumped, x - P @ bumped), x, P, params)
    # moving a_j by d changes coordinate j's stationarity gap by (|P_j|^2 + lambda2) d
    assert r >= (1 + params.lambda2) * 1e-3 * 0.999
    assert r < 1e-3 * 2 * np.abs(P.T @ P[:, j]).max() + 1e-3


def test_deterministic(rng):
    P = unit_dictionary(rng, 16, 32)
    X = rng.standard_normal((20, 16))
    a = solve_batch(X, P, ElasticNetParams(0.1, 0.01))
    b = solve_batch(X, P, ElasticNetParams(0.1, 0.01))
    assert a.tobytes() == b.tobytes()


def test_threads_do_not_change_result(rng):
    P = unit_dictionary(rng, 16, 32)
    X = rng.standard_normal((40, 16))
    p = ElasticNetParams(0.1, 0.01)
    assert solve_batch(X, P, p, threads=1).tobytes() == solve_batch(X, P, p, threads=3).tobytes()


def test_max_active_respected(rng):
    P = unit_dictionary(rng, 16, 32)
    X = rng.standard_normal((30, 16))
    A = solve_batch(X, P, ElasticNetParams(0.01, 0.01, max_active=3))
    assert (A != 0).sum(axis=1).max() <= 3


def test_duplicate_columns_stay_solvable(rng):
    P = unit_dictionary(rng, 6, 5)
    P = np.hstack([P, P[:, :2]])
    x = rng.standard_normal(6)
    params = ElasticNetParams(0.05, 0.01)
    code = solve(x, P, params)
    assert kkt_residual(code, x, P, params) < 1e-6


def test_non_finite_input_rejected():
    with pytest.raises(ElasticNetError):
        solve(np.array([np.nan, 1.0]), np.eye(2))


def test_iteration_cap_reports_best_iterate(rng):
    P = unit_dictionary(rng, 8, 12)
    X = rng.standard_normal((1, 8))
    with pytest.raises(ElasticNetError) as info:
        solve_batch(X, P, ElasticNetParams(1e-4, 0.01), max_iter=1)
    assert info.value.alpha is not None and info.value.kkt > 0


def test_params_validation():
    with pytest.raises(ValueError):
        ElasticNetParams(0.1, 0.0)
    with pytest.raises(ValueError):
        ElasticNetParams(-0.1, 0.01)
    with pytest.raises(ValueError):
        ElasticNetParams(0.1, 0.01, max_active=5).active_cap(4)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 16), st.integers(8, 32), st.floats(0.01, 0.5), st.integers(0, 2**32 - 1))
def test_solver_agrees_with_oracle(m, K, lam1, seed):
    r = np.random.default_rng(seed)
    P = unit_dictionary(r, m, K)
    x = r.standard_normal(m)
    params = ElasticNetParams(lam1, 0.01)
    a = solve(x, P, params)
    o = oracle_solve(x, P, params)
    assert np.abs(a.alpha - o.alpha).max() < 1e-5
    assert objective(a.alpha, x, P, params) <= objective(o.alpha, x, P, params) + 1e-8
    assert objective(o.alpha, x, P, params) <= objective(a.alpha, x, P, params) + 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 16), st.integers(2, 32), st.floats(1.0, 3.0), st.integers(0, 2**32 - 1))
def test_zero_threshold_property(m, K, scale, seed):
    r = np.random.default_rng(seed)
    P = unit_dictionary(r, m, K)
    x = r.standard_normal(m)
    code = solve(x, P, ElasticNetParams(scale * np.abs(P.T @ x).max(), 0.01))
    assert code.support.size == 0
