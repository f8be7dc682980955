import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smoothtensor._rng import derive_rng
from smoothtensor.exceptions import MatchingAmbiguityError, PreconditionError
from smoothtensor.gaussians import (
    AxisAlignedGMM,
    ExactMoments,
    GaussianLearnConfig,
    PartitionScheme,
    SampleMoments,
    learn,
    learn_means_weights,
    learn_variances,
    match_gmm,
    partitioned_moment,
    random_smoothed_model,
    sample,
    weight_from_scaled_vectors,
)
from smoothtensor.tensor_core import outer_product

seeds = st.integers(0, 2**32 - 1)


def planted(seed, n=12, k=3):
    return random_smoothed_model(n, k, 0.3, derive_rng(seed, "gmm-model"), mean_scale=3.0,
                                 var_range=(0.5, 1.0), min_weight=0.7)


def gmm_errors(est, truth):
    perm = match_gmm(est, truth)
    V = truth.variances[:, perm]
    return (
        float(np.max(np.linalg.norm(est.means - truth.means[:, perm], axis=0))),
        float(np.max(np.abs(est.weights - truth.weights[perm]))),
        float(np.max(np.linalg.norm(est.variances - V, axis=0) / np.linalg.norm(V, axis=0))),
    )


# model ---------------------------------------------------------------------

def test_model_validation():
    with pytest.raises(PreconditionError):
        AxisAlignedGMM([0.5, 0.5], np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(PreconditionError):
        AxisAlignedGMM([0.4, 0.5], np.zeros((3, 2)), np.ones((3, 2)))
    with pytest.raises(PreconditionError):
        AxisAlignedGMM([1.0], 10 * np.ones((3, 1)), np.ones((3, 1)), mean_cap=1.0)


def test_model_json_roundtrip():
    m = planted(0)
    doc = json.loads(json.dumps(m.to_json()))
    assert set(doc) == {"n", "k", "weights", "means", "variances"}
    back = AxisAlignedGMM.from_json(doc)
    np.testing.assert_array_equal(back.means, m.means)
    np.testing.assert_array_equal(back.variances, m.variances)


# sampling ------------------------------------------------------------------

def test_sample_tiny_variance():
    mu = np.array([[1.0], [-2.0], [3.0]])
    X = sample(AxisAlignedGMM([1.0], mu, np.full((3, 1), 1e-24)), 20, seed=0)
    np.testing.assert_allclose(X, np.tile(mu.T, (20, 1)), atol=1e-10)


def test_sample_standard_normal():
    X = sample(AxisAlignedGMM([1.0], np.zeros((4, 1)), np.ones((4, 1))), 100_000, seed=1)
    assert np.all(np.abs(X.mean(axis=0)) <= 0.02)
    assert np.all(np.abs(X.var(axis=0) - 1) <= 0.05)


def test_sample_zero_weight():
    means = np.array([[0.0, 100.0]])
    X = sample(AxisAlignedGMM([1.0, 0.0], means, np.ones((1, 2))), 1000, seed=2)
    assert np.all(np.abs(X) < 10)


# partitions ----------------------------------------------------------------

@given(st.integers(6, 30), st.integers(3, 5))
def test_partition_invariants(n, ell):
    if n < 2 * ell:
        return
    s = PartitionScheme(n, ell)
    for groups in [s.groups] + [s.swapped(t) for t in range(1, ell)]:
        flat = np.sort(np.concatenate(groups))
        np.testing.assert_array_equal(flat, np.arange(n))
    alt = s.alt_groups
    for t in range(2, ell):
        np.testing.assert_array_equal(alt[t], s.groups[t])
    A0, B0 = s.halves(0)
    A1, B1 = s.halves(1)
    np.testing.assert_array_equal(alt[0], np.concatenate([A0, A1]))
    np.testing.assert_array_equal(alt[1], np.concatenate([B0, B1]))


def test_partition_excluding():
    s = PartitionScheme(9, 3).excluding(4)
    assert 4 not in np.concatenate(s.groups) and len(s.groups) == 3


# moments -------------------------------------------------------------------

def test_moment_zero_variance_samples():
    mu = np.array([1.0, 2.0, -1.0, 0.5, 3.0, -2.0])
    scheme = PartitionScheme(6, 3)
    T = np.asarray(partitioned_moment(np.tile(mu, (7, 1)), scheme))
    expected = outer_product([mu[g] for g in scheme.groups]).array
    np.testing.assert_allclose(T, expected, atol=1e-12)


def test_moment_zero_mean_cancels():
    m = AxisAlignedGMM([1.0], np.zeros((6, 1)), np.full((6, 1), 2.0))
    T = np.asarray(partitioned_moment(sample(m, 10**6, seed=3), PartitionScheme(6, 3)))
    assert np.max(np.abs(T)) <= 5e-3 * 2.0**1.5


def test_sample_moments_match_exact():
    m = planted(1, n=6, k=2)
    groups = PartitionScheme(6, 3).groups
    emp = SampleMoments(sample(m, 400_000, seed=5)).tensor(groups, square_coord=None)
    ex = ExactMoments(m).tensor(groups, square_coord=None)
    assert np.max(np.abs(np.asarray(emp) - np.asarray(ex))) <= 0.1


# weight lemma --------------------------------------------------------------

def test_weight_from_scaled_vectors_exact(rng):
    mu = rng.standard_normal(5)
    w, ell = 0.25, 3
    u, v = w ** (1 / (ell - 1)) * mu, w ** (1 / ell) * mu
    assert weight_from_scaled_vectors(u, v, ell) == pytest.approx(0.25, abs=1e-12)
    assert weight_from_scaled_vectors(mu, mu, ell) == pytest.approx(1.0)


def test_weight_from_scaled_vectors_perturbed(rng):
    mu = rng.standard_normal(6)
    mu /= np.linalg.norm(mu)
    w, ell, delta = 0.3, 3, 1e-6
    u = w ** (1 / (ell - 1)) * mu + delta * rng.standard_normal(6) / np.sqrt(6)
    v = w ** (1 / ell) * mu + delta * rng.standard_normal(6) / np.sqrt(6)
    # first-order sensitivity: ell(ell-1) * (2 + 1) * delta / (w^(1/(ell-1)) L_min)
    bound = ell * (ell - 1) * 3 * delta / w ** (1 / (ell - 1))
    assert abs(weight_from_scaled_vectors(u, v, ell) - w) <= bound


def test_weight_from_zero_vector():
    with pytest.raises(PreconditionError):
        weight_from_scaled_vectors(np.zeros(3), np.ones(3), 3)


# learner -------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_means_weights_exact(seed):
    m = planted(seed)
    scheme = PartitionScheme(m.n, 3)
    w, means, norms, diag = learn_means_weights(ExactMoments(m), m.k, scheme)
    est = AxisAlignedGMM(w, means, m.variances)
    perm = match_gmm(est, m)
    np.testing.assert_allclose(means, m.means[:, perm], atol=1e-6)
    np.testing.assert_allclose(w, m.weights[perm], atol=1e-6)
    assert abs(w.sum() - 1) <= 1e-6 and np.all(w > 0)
    # ratio identity C_{l+1}/C_l = ||mu~_i||
    np.testing.assert_allclose(norms, np.linalg.norm(m.means[:, perm], axis=0), rtol=1e-9)
    assert diag["scale_route_gap"] <= 1e-8
    assert diag["weight_lemma_gap"] <= 1e-6


def test_variances_exact():
    m = planted(4, n=8, k=2)
    scheme = PartitionScheme(m.n, 3)
    src = ExactMoments(m)
    var, info = learn_variances(src, m.weights, m.means, scheme)
    np.testing.assert_allclose(var, m.variances, atol=1e-6)
    assert info["variance_clamped"] == 0


def test_variances_sampled():
    m = planted(4, n=8, k=2)
    scheme = PartitionScheme(m.n, 3)
    errs = []
    for s in range(10):
        X = sample(m, 10**6, seed=derive_rng(4, "var", s))
        var, _ = learn_variances(X, m.weights, m.means, scheme)
        errs.append(np.max(np.linalg.norm(var - m.variances, axis=0) / np.linalg.norm(m.variances, axis=0)))
    assert np.median(errs) <= 0.1


def test_full_pipeline_exact():
    m = planted(0)
    est, diag = learn(ExactMoments(m), m.k, 3)
    assert max(gmm_errors(est, m)) <= 1e-6
    assert "matching_margins" in diag and "condition_reports" in diag


def test_full_pipeline_sampled():
    m = planted(0)
    est, _ = learn(sample(m, 10**6, seed=9), m.k, 3)
    mean_err, w_err, var_err = gmm_errors(est, m)
    assert mean_err <= 0.05 and w_err <= 0.02 and var_err <= 0.1


def test_matching_margin_rule():
    from smoothtensor.gaussians import _match

    clear = np.array([[1.0, 0.1], [0.2, 0.99]])
    perm, margins = _match(clear, 2.0, 1e-9, "test")
    np.testing.assert_array_equal(perm, [0, 1])
    assert np.all(margins >= 2.0)
    close = np.array([[0.9, 0.85], [0.85, 0.9]])
    with pytest.raises(MatchingAmbiguityError, match="ambiguous"):
        _match(close, 2.0, 1e-9, "test")


def test_identical_components_rejected():
    means = np.tile(np.linspace(1, 2, 9)[:, None], (1, 2))
    m = AxisAlignedGMM([0.5, 0.5], means, np.ones((9, 2)))
    with pytest.raises(PreconditionError):
        learn_means_weights(ExactMoments(m), 2, PartitionScheme(9, 3), GaussianLearnConfig())


def test_learner_needs_three_groups():
    m = planted(0, n=6, k=2)
    with pytest.raises(PreconditionError):
        learn_means_weights(ExactMoments(m), 2, PartitionScheme(6, 2))
