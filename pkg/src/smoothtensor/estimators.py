"""scikit-learn style wrappers around the functional API.

The estimators hold hyperparameters in ``__init__`` (so ``get_params`` /
``set_params`` / ``clone`` work) and store learned state in trailing
underscore attributes after ``fit``.
"""
import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, DensityMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import gaussians, multiview
from .decompose import DecomposeConfig, decompose, decompose_overcomplete, refine_als
from .tensor_core import FactorSet, khatri_rao_many, reconstruct
from .validation import check_index_samples, check_rank, check_real_samples, check_seed, check_tensor

__all__ = ["TensorDecomposition", "MultiViewMixture", "AxisAlignedGaussianMixture"]


class TensorDecomposition(TransformerMixin, BaseEstimator):
    """CP decomposition of a single tensor.

    ``fit(T)`` decomposes ``T`` (order 3 directly, higher orders through the
    flattening driver). ``transform(T)`` returns the least-squares weights of
    another tensor on the fitted rank-one terms.

    Parameters
    ----------
    rank : int
    max_retries : int, default=5
    pairing_tolerance : float, default=0.25
    noise_floor : float, default=0.0
    refine_iters : int, default=0
        Alternating least-squares sweeps after the algebraic solution.
    random_state : int, default=0

    Attributes
    ----------
    factors_ : list of ndarray
        Unit-norm factor matrices, one per mode.
    weights_ : ndarray of shape (rank,)
    condition_report_ : dict
    """

    def __init__(self, rank=1, max_retries=5, pairing_tolerance=0.25, noise_floor=0.0,
                 refine_iters=0, random_state=0):
        self.rank = rank
        self.max_retries = max_retries
        self.pairing_tolerance = pairing_tolerance
        self.noise_floor = noise_floor
        self.refine_iters = refine_iters
        self.random_state = random_state

    def _config(self):
        return DecomposeConfig(max_retries=self.max_retries, pairing_tolerance=self.pairing_tolerance,
                               rng_seed=check_seed(self.random_state), noise_floor=self.noise_floor)

    def fit(self, X, y=None):
        arr = check_tensor(X)
        R = check_rank(self.rank)
        cfg = self._config()
        if arr.ndim == 3:
            fs, report = decompose(arr, R, cfg)
        else:
            fs, report = decompose_overcomplete(arr, R, cfg, return_report=True)
        if self.refine_iters:
            fs, _ = refine_als(arr, fs, max_iter=self.refine_iters)
        self.factor_set_ = fs
        self.factors_ = fs.factors
        self.weights_ = fs.weights
        self.condition_report_ = report.to_dict()
        self.dims_ = arr.shape
        return self

    def transform(self, X):
        check_is_fitted(self, "factor_set_")
        arr = check_tensor(X)
        if arr.shape != self.dims_:
            raise ValueError(f"tensor shape {arr.shape} does not match fitted shape {self.dims_}")
        coef, *_ = np.linalg.lstsq(khatri_rao_many(self.factors_), arr.ravel(), rcond=None)
        return coef

    def inverse_transform(self, weights):
        check_is_fitted(self, "factor_set_")
        return reconstruct(FactorSet(np.asarray(weights, dtype=float), self.factors_)).array


class MultiViewMixture(DensityMixin, BaseEstimator):
    """Mixture of ``n_components`` product distributions over ``l`` discrete views.

    ``X`` is an ``(N, l)`` array of symbol indices (one-hot ``(N, l, n)`` is
    accepted too).

    Attributes
    ----------
    weights_ : ndarray of shape (n_components,)
    means_ : list of ndarray
        ``means_[j][:, i]`` is the distribution of view ``j`` in component ``i``.
    diagnostics_ : dict
    """

    def __init__(self, n_components=2, n_symbols=None, refine_iters=100, max_retries=5, random_state=0):
        self.n_components = n_components
        self.n_symbols = n_symbols
        self.refine_iters = refine_iters
        self.max_retries = max_retries
        self.random_state = random_state

    def fit(self, X, y=None):
        X, n = check_index_samples(X, self.n_symbols)
        R = check_rank(self.n_components, name="n_components")
        cfg = DecomposeConfig(max_retries=self.max_retries, rng_seed=check_seed(self.random_state))
        self.weights_, self.means_, self.diagnostics_ = multiview.learn(X, R, cfg, n=n,
                                                                       refine_iters=self.refine_iters)
        self.n_symbols_ = n
        return self

    def _log_joint(self, X):
        check_is_fitted(self, "weights_")
        X, _ = check_index_samples(X, self.n_symbols_)
        if X.shape[1] != len(self.means_):
            raise ValueError(f"expected {len(self.means_)} views, got {X.shape[1]}")
        with np.errstate(divide="ignore"):
            out = np.log(self.weights_)[None, :].repeat(X.shape[0], axis=0)
            for j, M in enumerate(self.means_):
                out = out + np.log(M[X[:, j]])
        return out

    def score_samples(self, X):
        return logsumexp(self._log_joint(X), axis=1)

    def predict_proba(self, X):
        lj = self._log_joint(X)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)


class AxisAlignedGaussianMixture(DensityMixin, BaseEstimator):
    """Gaussian mixture with diagonal covariances, learned from moments.

    Parameters
    ----------
    n_components : int
    n_groups : int, default=3
        Number of coordinate groups ``l`` in the partitioned moments.
    exact_model : AxisAlignedGMM, optional
        When set, ``fit`` ignores ``X`` and uses closed-form moments of this
        model. Meant for testing the algorithm without sampling error.

    Attributes
    ----------
    weights_ : ndarray of shape (n_components,)
    means_ : ndarray of shape (n_components, n_features)
    variances_ : ndarray of shape (n_components, n_features)
    diagnostics_ : dict
    """

    def __init__(self, n_components=2, n_groups=3, refine_iters=100, var_floor=1e-9, match_margin=2.0,
                 max_retries=5, random_state=0, exact_model=None):
        self.n_components = n_components
        self.n_groups = n_groups
        self.refine_iters = refine_iters
        self.var_floor = var_floor
        self.match_margin = match_margin
        self.max_retries = max_retries
        self.random_state = random_state
        self.exact_model = exact_model

    def fit(self, X=None, y=None):
        k = check_rank(self.n_components, name="n_components")
        cfg = gaussians.GaussianLearnConfig(
            decompose=DecomposeConfig(max_retries=self.max_retries, rng_seed=check_seed(self.random_state)),
            match_margin=self.match_margin,
            var_floor=self.var_floor,
            refine_iters=self.refine_iters,
        )
        source = self.exact_model if self.exact_model is not None else check_real_samples(X)
        model, self.diagnostics_ = gaussians.learn(source, k, self.n_groups, cfg)
        self.model_ = model
        self.weights_ = model.weights
        self.means_ = model.means.T
        self.variances_ = model.variances.T
        self.n_features_in_ = model.n
        return self

    def _log_joint(self, X):
        check_is_fitted(self, "model_")
        X = check_real_samples(X, self.n_features_in_)
        quad = ((X[:, None, :] - self.means_[None]) ** 2 / self.variances_[None]).sum(axis=2)
        logdet = np.log(2 * np.pi * self.variances_).sum(axis=1)
        return np.log(self.weights_)[None, :] - 0.5 * (quad + logdet[None, :])

    def score_samples(self, X):
        return logsumexp(self._log_joint(X), axis=1)

    def predict_proba(self, X):
        lj = self._log_joint(X)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)
