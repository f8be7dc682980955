import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smoothtensor.exceptions import BudgetExceededError, DegenerateInputWarning, PreconditionError
from smoothtensor.linalg import (
    condition_number,
    eig_nonsymmetric,
    eig_perturbation_bound,
    eigenvalue_separation,
    eigvec_deviation,
    krank_additive_check,
    krank_exhaustive,
    krank_sampled,
    leave_one_out_distance,
    small_combination,
    svd,
)
from smoothtensor.tensor_core import khatri_rao

seeds = st.integers(0, 2**32 - 1)


def well_conditioned(rng, n, kappa_max=10.0):
    while True:
        X = rng.standard_normal((n, n))
        if condition_number(X) <= kappa_max:
            return X


# svd -----------------------------------------------------------------------

def test_svd_examples(rng):
    np.testing.assert_allclose(svd(np.eye(3))[1], [1, 1, 1])
    np.testing.assert_allclose(svd(np.diag([3.0, 0.0]))[1], [3, 0])
    A = rng.standard_normal((5, 3))
    U, s, V = svd(A)
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-12)
    assert np.linalg.norm(U @ np.diag(s) @ V.T - A) <= 1e-10


# eigendecomposition --------------------------------------------------------

def test_eig_diagonal_and_swap():
    e = eig_nonsymmetric(np.diag([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(e.eigenvalues, [1, 2, 3])
    np.testing.assert_allclose(np.abs(e.eigenvectors), np.eye(3), atol=1e-12)
    e = eig_nonsymmetric(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(e.eigenvalues, [-1, 1])
    s = 1 / np.sqrt(2)
    np.testing.assert_allclose(np.abs(e.eigenvectors), [[s, s], [s, s]], atol=1e-12)
    assert e.is_real


def test_eig_planted(rng):
    X = well_conditioned(rng, 3)
    M = X @ np.diag([1.0, 2.0, 4.0]) @ np.linalg.inv(X)
    e = eig_nonsymmetric(M)
    np.testing.assert_allclose(e.eigenvalues, [1, 2, 4], atol=1e-10)
    Xn = X / np.linalg.norm(X, axis=0)
    for i in range(3):
        v = e.eigenvectors[:, i]
        assert min(np.linalg.norm(v - Xn[:, i]), np.linalg.norm(v + Xn[:, i])) <= 1e-7
    assert e.max_residual <= 1e-10


def test_eig_complex_pair_flagged():
    e = eig_nonsymmetric(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert not e.is_real


@given(seeds)
def test_eig_recovers_separated_spectrum(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    U = well_conditioned(rng, n)
    d = np.cumsum(0.1 + rng.random(n))
    e = eig_nonsymmetric(U @ np.diag(d) @ np.linalg.inv(U))
    np.testing.assert_allclose(np.sort(e.eigenvalues.real), d, atol=1e-8)
    np.testing.assert_allclose(np.linalg.norm(e.eigenvectors, axis=0), 1.0, atol=1e-12)


# leave-one-out -------------------------------------------------------------

def test_leave_one_out_examples():
    assert leave_one_out_distance(np.eye(4)) == pytest.approx(1.0)
    A = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    assert leave_one_out_distance(A) == pytest.approx(0.0, abs=1e-12)


def test_leave_one_out_single_column_warns():
    with pytest.warns(DegenerateInputWarning):
        assert leave_one_out_distance(np.array([[3.0], [4.0]])) == pytest.approx(5.0)


@given(seeds)
def test_leave_one_out_sandwich(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    R = int(rng.integers(2, min(n, 10) + 1))
    A = rng.standard_normal((n, R))
    loo = leave_one_out_distance(A)
    smin = svd(A)[1][-1]
    assert loo / np.sqrt(R) <= smin + 1e-10
    assert smin <= loo + 1e-10


# Kruskal rank --------------------------------------------------------------

def test_krank_examples():
    assert krank_exhaustive(np.eye(4), tau=2).k_rank == 4
    A = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    assert krank_exhaustive(A, tau=1e6).k_rank == 1


def test_krank_matches_subset_ranks(rng):
    A = rng.standard_normal((4, 6))
    rep = krank_exhaustive(A)
    assert rep.k_rank == 4 and rep.mode == "exhaustive" and rep.certified
    for k in range(1, 5):
        for S in itertools.combinations(range(6), k):
            assert np.linalg.matrix_rank(A[:, S]) == k


def test_krank_budget_refusal(rng):
    with pytest.raises(BudgetExceededError, match="subsets"):
        krank_exhaustive(rng.standard_normal((10, 30)), budget=100)


def test_krank_sampled_is_upper_bound(rng):
    A = rng.standard_normal((4, 6))
    A[:, 5] = A[:, 0]
    rep = krank_sampled(A, n_samples=200, seed=1)
    assert not rep.certified
    assert rep.k_rank >= krank_exhaustive(A).k_rank


def test_krank_additive_examples(rng):
    assert krank_additive_check(np.eye(3), np.eye(3))
    assert krank_additive_check(rng.standard_normal((3, 5)), rng.standard_normal((3, 5)))
    U = rng.standard_normal((3, 4))
    U[:, 1] = U[:, 0]
    assert krank_additive_check(U, rng.standard_normal((3, 4)))
    with pytest.raises(PreconditionError):
        krank_additive_check(np.eye(3), np.eye(2))


def test_krank_additive_zero_column_is_literal():
    # a zero column gives k-rank 0, outside the inequality's hypothesis
    U = np.eye(2, 3)
    U[:, 2] = [1.0, 1.0]
    V = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    assert krank_exhaustive(khatri_rao(U, V)).k_rank == 0
    assert not krank_additive_check(U, V)


@given(seeds)
def test_krank_additive_property(seed):
    rng = np.random.default_rng(seed)
    R = int(rng.integers(2, 6))
    U = rng.integers(-1, 2, size=(3, R)).astype(float)
    V = rng.integers(-1, 2, size=(2, R)).astype(float)
    for M in (U, V):
        for c in np.flatnonzero(~M.any(axis=0)):
            M[0, c] = 1.0
    assert krank_additive_check(U, V)


@given(seeds)
def test_kr_condition_number_claim(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    U, V = rng.standard_normal((n, n)), rng.standard_normal((n, n))
    # the bound needs unit-norm columns (Schur product argument on the Gram matrices)
    U /= np.linalg.norm(U, axis=0)
    V /= np.linalg.norm(V, axis=0)
    sU, sV = svd(U)[1], svd(V)[1]
    kr = condition_number(khatri_rao(U, V))
    middle = min(sU[0], sV[0]) / max(sU[-1], sV[-1])
    assert kr <= middle * (1 + 1e-9)
    assert middle <= min(condition_number(U), condition_number(V)) * (1 + 1e-12)


# separation / small combination -------------------------------------------

def test_separation_examples(rng):
    assert eigenvalue_separation([1, 2, 4]) == 1
    assert eigenvalue_separation([3, 3]) == 0
    d = rng.standard_normal(7)
    brute = min(abs(a - b) for i, a in enumerate(d) for j, b in enumerate(d) if i != j)
    assert eigenvalue_separation(d) == pytest.approx(brute)


def test_small_combination_examples(rng):
    np.testing.assert_allclose(np.abs(small_combination(np.eye(3), 3, 1.0)), np.eye(3))
    alpha = small_combination(2 * np.eye(3), 3, 2.0)
    np.testing.assert_allclose(np.linalg.norm(alpha, axis=1), 0.5)
    with pytest.raises(PreconditionError):
        small_combination(np.eye(3), 3, 2.0)


@given(seeds)
def test_small_combination_property(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((6, 8))
    s = svd(M)[1]
    eta = 0.9 * s[2]
    alpha = small_combination(M, 3, eta)
    U = svd(M)[0]
    for k in range(3):
        assert np.linalg.norm(alpha[k]) <= 1 / eta + 1e-12
        assert np.linalg.norm(M @ alpha[k] - U[:, k]) <= 1e-9


# perturbation bound --------------------------------------------------------

def test_perturbation_bound_zero():
    U = np.eye(2)
    assert eig_perturbation_bound(U, np.diag([1.0, 2.0])) == 0.0
    assert eigvec_deviation(U, np.diag([1.0, 2.0])) == pytest.approx(0.0, abs=1e-15)


def test_perturbation_bound_small_f(rng):
    U, D = np.eye(2), np.diag([1.0, 2.0])
    F = 1e-6 * rng.standard_normal((2, 2))
    assert eigvec_deviation(U, D, F=F) <= eig_perturbation_bound(U, D, F=F)


def test_perturbation_bound_precondition(rng):
    with pytest.raises(PreconditionError):
        eig_perturbation_bound(np.eye(2), np.diag([1.0, 1.1]), F=np.ones((2, 2)))


@pytest.mark.parametrize("scale", [1e-8, 1e-6, 1e-4])
def test_perturbation_bound_holds(scale):
    rng = np.random.default_rng(int(-np.log10(scale)))
    for _ in range(10):
        U = well_conditioned(rng, 4)
        U /= np.linalg.norm(U, axis=0)
        d = np.arange(1.0, 5.0)
        E = scale * rng.standard_normal((4, 4))
        F = scale * rng.standard_normal((4, 4))
        assert eigvec_deviation(U, d, E, F) <= eig_perturbation_bound(U, d, E, F)
