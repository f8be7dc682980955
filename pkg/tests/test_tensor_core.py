import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smoothtensor.exceptions import PreconditionError
from smoothtensor.tensor_core import (
    DenseTensor,
    FactorSet,
    contract_to_matrix,
    flatten,
    flatten_factors,
    khatri_rao,
    khatri_rao_many,
    multilinear_apply,
    outer_product,
    read_factors,
    read_tensor,
    reconstruct,
    unfold,
    write_factors,
    write_tensor,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def random_factorset(rng, dims, R):
    return FactorSet(rng.standard_normal(R), [rng.standard_normal((d, R)) for d in dims])


# DenseTensor / FactorSet ---------------------------------------------------

def test_dense_tensor_rejects_bad_shapes():
    with pytest.raises(PreconditionError):
        DenseTensor.from_data([2, 3], np.zeros(5))
    with pytest.raises(PreconditionError):
        DenseTensor(np.zeros((2, 0)))


def test_dense_tensor_is_read_only():
    T = DenseTensor(np.ones((2, 2)))
    with pytest.raises(ValueError):
        T.array[0, 0] = 5.0


def test_dense_tensor_row_major_data():
    T = DenseTensor.from_data([2, 3], np.arange(6))
    assert T.array[1, 0] == 3.0
    assert T.order == 2 and T.dims == (2, 3)
    np.testing.assert_array_equal(T.data, np.arange(6))


def test_factorset_column_mismatch():
    with pytest.raises(PreconditionError):
        FactorSet(np.ones(2), [np.ones((3, 2)), np.ones((3, 3))])


def test_canonical_form(rng):
    fs = random_factorset(rng, (3, 4, 5), 3)
    c = fs.canonical()
    for f in c.factors:
        np.testing.assert_allclose(np.linalg.norm(f, axis=0), 1.0, atol=1e-14)
    for r in range(3):
        col = c.factors[0][:, r]
        assert col[np.flatnonzero(col)[0]] > 0
    np.testing.assert_allclose(reconstruct(c).array, reconstruct(fs).array, atol=1e-12)


# outer products ------------------------------------------------------------

def test_outer_product_examples():
    np.testing.assert_array_equal(outer_product([[1, 0], [0, 1]]).array, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(outer_product([[2], [3], [4]]).array, [[[24]]])
    np.testing.assert_array_equal(outer_product([[1, 1], [1, -1]]).array, [[1, -1], [1, -1]])


def test_reconstruct_examples():
    fs = FactorSet([2.0], [np.array([[1.0], [0.0]]), np.array([[1.0], [0.0]])])
    np.testing.assert_array_equal(reconstruct(fs).array, [[2, 0], [0, 0]])
    e = np.eye(2)
    T = reconstruct(FactorSet([1.0, 2.0], [e, e, e])).array
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 0], expected[1, 1, 1] = 1, 2
    np.testing.assert_array_equal(T, expected)


# Khatri-Rao ----------------------------------------------------------------

def test_khatri_rao_examples(rng):
    np.testing.assert_array_equal(khatri_rao([[1], [0]], [[0], [1]]), [[0], [1], [0], [0]])
    np.testing.assert_array_equal(khatri_rao(np.eye(2), np.eye(2)), [[1, 0], [0, 0], [0, 0], [0, 1]])
    U, V = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    K = khatri_rao(U, V)
    for i in range(2):
        np.testing.assert_allclose(K[:, i], outer_product([U[:, i], V[:, i]]).data)


@given(
    arrays(np.float64, (4, 3), elements=finite),
    arrays(np.float64, (2, 3), elements=finite),
)
def test_khatri_rao_column_norms(U, V):
    K = khatri_rao(U, V)
    expected = np.linalg.norm(U, axis=0) * np.linalg.norm(V, axis=0)
    np.testing.assert_allclose(np.linalg.norm(K, axis=0), expected, rtol=1e-14, atol=1e-300)


def test_khatri_rao_many_matches_pairwise(rng):
    A, B, C = (rng.standard_normal((d, 4)) for d in (2, 3, 4))
    np.testing.assert_allclose(khatri_rao_many([A, B, C]), khatri_rao(khatri_rao(A, B), C))


# flattening ----------------------------------------------------------------

def test_flatten_matches_unfolding(rng):
    T = rng.standard_normal((2, 3, 4))
    F = flatten(T, [(0, 1), (2,)])
    np.testing.assert_allclose(F.array, unfold(T, 2).T)


def test_flatten_rank_one_order_five(rng):
    a = [rng.standard_normal(d) for d in (2, 2, 3, 2, 2)]
    T = outer_product(a)
    F = flatten(T, [(0, 1), (2, 3), (4,)])
    expected = outer_product([np.kron(a[0], a[1]), np.kron(a[2], a[3]), a[4]])
    np.testing.assert_allclose(F.array, expected.array, atol=1e-14)


@given(
    st.integers(0, 2**32 - 1),
    st.sampled_from([[(0,), (1, 2), (3,)], [(0, 1), (2, 3)], [(0, 1, 2), (3,)], [(0, 2), (1,), (3,)]]),
)
def test_flatten_reconstruct_commute(seed, groups):
    rng = np.random.default_rng(seed)
    fs = random_factorset(rng, (2, 3, 2, 3), 3)
    lhs = flatten(reconstruct(fs), groups).array
    rhs = reconstruct(flatten_factors(fs, groups)).array
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(lhs).max())


# contractions --------------------------------------------------------------

def test_contract_examples(rng):
    e = np.eye(2)
    T = reconstruct(FactorSet([1.0, 2.0], [e, e, e]))
    np.testing.assert_array_equal(contract_to_matrix(T, [1, 0]), np.diag([1.0, 0.0]))
    np.testing.assert_array_equal(contract_to_matrix(T, [0, 0]), np.zeros((2, 2)))
    R = rng.standard_normal((3, 4, 5))
    a = rng.standard_normal(5)
    brute = np.zeros((3, 4))
    for i in range(3):
        for j in range(4):
            for k in range(5):
                brute[i, j] += R[i, j, k] * a[k]
    np.testing.assert_allclose(contract_to_matrix(R, a), brute, atol=1e-12)


@given(st.integers(0, 2**32 - 1), finite, finite)
def test_contract_multilinear(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((3, 3, 4))
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    lhs = contract_to_matrix(T, alpha * a + beta * b)
    rhs = alpha * contract_to_matrix(T, a) + beta * contract_to_matrix(T, b)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + abs(alpha) + abs(beta)))


def test_multilinear_apply(rng):
    a = [rng.standard_normal(d) for d in (2, 3, 4)]
    x = [rng.standard_normal(d) for d in (2, 3, 4)]
    T = outer_product(a)
    expected = np.prod([ai @ xi for ai, xi in zip(a, x)])
    assert multilinear_apply(T, x) == pytest.approx(expected)
    R = rng.standard_normal((2, 3, 4))
    basis = [np.eye(d)[i] for d, i in zip((2, 3, 4), (1, 2, 3))]
    assert multilinear_apply(R, basis) == pytest.approx(R[1, 2, 3])


# file formats --------------------------------------------------------------

def test_tensor_file_roundtrip(rng):
    T = DenseTensor(rng.standard_normal((2, 3, 4)))
    buf = io.StringIO()
    write_tensor(buf, T)
    buf.seek(0)
    assert buf.getvalue().splitlines()[0] == "3 2 3 4"
    assert read_tensor(buf) == T


def test_factor_file_roundtrip(rng):
    fs = random_factorset(rng, (3, 4, 2), 2)
    buf = io.StringIO()
    write_factors(buf, fs)
    buf.seek(0)
    back = read_factors(buf)
    np.testing.assert_array_equal(back.weights, fs.weights)
    for a, b in zip(back.factors, fs.factors):
        np.testing.assert_array_equal(a, b)


def test_tensor_file_skips_comments():
    T = read_tensor(io.StringIO("# seed: 1\n2 1 2\n1.5 2.5\n"))
    np.testing.assert_array_equal(T.array, [[1.5, 2.5]])
