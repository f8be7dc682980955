"""Multi-view mixtures: sampling, moment estimation and moment-based learning.

Samples are stored as an integer array of shape ``(N, l)``: entry ``[t, j]``
is the coordinate hot in view ``j`` of sample ``t``. :func:`to_one_hot`
expands them when indicator vectors are really needed.
"""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._rng import as_generator
from .decompose import DecomposeConfig, decompose_overcomplete, refine_als
from .exceptions import DegenerateTermError, PreconditionError, SplitResidualWarning
from .tensor_core import DenseTensor, FactorSet, as_array, reconstruct

__all__ = [
    "MultiViewModel",
    "SparseMoment",
    "sample",
    "to_one_hot",
    "empirical_moment",
    "exact_moment",
    "learn",
    "learn_from_moment",
    "match_components",
    "random_model",
]

#: above this many cells the empirical moment is accumulated sparsely
DENSE_LIMIT = 10**7


@dataclass
class MultiViewModel:
    """``R`` components, ``l`` views over ``n`` symbols.

    ``means[j][:, i]`` is the distribution of view ``j`` under component ``i``.
    """

    weights: np.ndarray
    means: list

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.means = [np.asarray(M, dtype=float) for M in self.means]
        R = self.weights.size
        if not self.means:
            raise PreconditionError("need at least one view")
        n = self.means[0].shape[0]
        for j, M in enumerate(self.means):
            if M.shape != (n, R):
                raise PreconditionError(f"view {j} means have shape {M.shape}, expected {(n, R)}")
            if np.any(M < 0) or not np.allclose(M.sum(axis=0), 1.0, atol=1e-12, rtol=0):
                raise PreconditionError(f"view {j} columns must be probability vectors")
        if np.any(self.weights < 0):
            raise PreconditionError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise PreconditionError(f"weights sum to {self.weights.sum()}, expected 1")

    @property
    def R(self):
        return self.weights.size

    @property
    def ell(self):
        return len(self.means)

    @property
    def n(self):
        return self.means[0].shape[0]

    def to_json(self):
        """``{n, ell, R, weights, means[view][component][coord]}``."""
        return {
            "n": self.n,
            "ell": self.ell,
            "R": self.R,
            "weights": self.weights.tolist(),
            "means": [M.T.tolist() for M in self.means],
        }

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        means = [np.asarray(v, dtype=float).T for v in obj["means"]]
        model = cls(obj["weights"], means)
        for key, val in (("n", model.n), ("ell", model.ell), ("R", model.R)):
            if key in obj and int(obj[key]) != val:
                raise PreconditionError(f"model JSON declares {key}={obj[key]} but data implies {val}")
        return model


def random_model(n, R, ell, rng, concentration=1.0, min_weight=0.1, min_sigma=0.0, max_draws=1000):
    """Random model: Dirichlet means, weights bounded below by ``min_weight / R``.

    With ``min_sigma > 0`` the means are redrawn until every view's mean matrix
    has smallest singular value at least ``min_sigma`` (a separation requirement).
    """
    rng = as_generator(rng)
    raw = rng.dirichlet(np.full(R, 1.0))
    w = min_weight / R + (1 - min_weight) * raw
    for _ in range(max_draws):
        means = [rng.dirichlet(np.full(n, concentration), size=R).T for _ in range(ell)]
        if min_sigma <= 0 or min(np.linalg.svd(M, compute_uv=False)[-1] for M in means) >= min_sigma:
            return MultiViewModel(w / w.sum(), means)
    raise PreconditionError(f"no model with sigma_min >= {min_sigma} in {max_draws} draws")


def sample(model, N, seed):
    """Draw ``N`` samples; returns int array of shape (N, l)."""
    rng = as_generator(seed)
    comp = rng.choice(model.R, size=N, p=model.weights)
    u = rng.random((N, model.ell))
    out = np.empty((N, model.ell), dtype=np.int64)
    for j, M in enumerate(model.means):
        cdf = np.cumsum(M, axis=0).T  # R x n
        cdf[:, -1] = 1.0
        rows = cdf[comp]
        out[:, j] = np.minimum((u[:, j, None] >= rows).sum(axis=1), model.n - 1)
    return out


def to_one_hot(samples, n):
    """(N, l) indices -> (N, l, n) indicator array."""
    samples = np.asarray(samples)
    out = np.zeros(samples.shape + (n,))
    np.put_along_axis(out, samples[..., None], 1.0, axis=-1)
    return out


@dataclass
class SparseMoment:
    """Empirical moment kept as (flat index, value) pairs; densify on demand."""

    dims: tuple
    flat_indices: np.ndarray
    values: np.ndarray = field(repr=False)

    def todense(self):
        data = np.zeros(int(np.prod(self.dims)))
        data[self.flat_indices] = self.values
        return DenseTensor(data.reshape(self.dims))


def _as_indices(samples, n=None):
    arr = np.asarray(samples)
    if arr.ndim == 3:
        if not np.all((arr == 0) | (arr == 1)) or not np.all(arr.sum(axis=2) == 1):
            raise PreconditionError("one-hot samples must have exactly one 1 per view")
        return arr.argmax(axis=2), arr.shape[2]
    if arr.ndim != 2 or not np.issubdtype(arr.dtype, np.integer):
        raise PreconditionError("samples must be an (N, l) integer array or (N, l, n) one-hot array")
    if n is None:
        n = int(arr.max()) + 1
    if arr.min() < 0 or arr.max() >= n:
        raise PreconditionError(f"sample indices must lie in [0, {n})")
    return arr, n


def empirical_moment(samples, n=None, sparse=None):
    """Average of ``x^(1) (x) ... (x) x^(l)`` over the samples.

    Each sample adds ``1/N`` to one cell. Returns a DenseTensor, or a
    :class:`SparseMoment` when ``n**l`` exceeds ``DENSE_LIMIT`` (override with
    ``sparse``).
    """
    idx, n = _as_indices(samples, n)
    N, ell = idx.shape
    if N == 0:
        raise PreconditionError("need at least one sample")
    dims = (n,) * ell
    flat = np.ravel_multi_index(tuple(idx.T), dims)
    if sparse is None:
        sparse = n**ell > DENSE_LIMIT
    if sparse:
        cells, counts = np.unique(flat, return_counts=True)
        return SparseMoment(dims, cells, counts / N)
    counts = np.bincount(flat, minlength=n**ell)
    return DenseTensor((counts / N).reshape(dims))


def exact_moment(model):
    """``sum_r w_r mu_r^(1) (x) ... (x) mu_r^(l)``."""
    return reconstruct(FactorSet(model.weights, model.means))


def learn_from_moment(T, R, cfg=None, refine_iters=100):
    """Recover weights and per-view distributions from an ``l``-th moment tensor.

    The decomposition is polished with ``refine_iters`` alternating
    least-squares sweeps (0 disables). Returns ``(weights, means,
    diagnostics)`` with ``means`` a list of ``n x R`` matrices.
    """
    cfg = cfg or DecomposeConfig()
    if isinstance(T, SparseMoment):
        T = T.todense()
    arr = as_array(T)
    ell = arr.ndim
    if R == 1:
        # single component: the moment is a product of the marginals
        means = [arr.sum(axis=tuple(k for k in range(ell) if k != j)).reshape(-1, 1) for j in range(ell)]
        fs = FactorSet(np.ones(1), means)
        report = None
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SplitResidualWarning)
            fs, report = decompose_overcomplete(arr, R, cfg, return_report=True)
        if refine_iters > 0:
            fs, info = refine_als(arr, fs, max_iter=refine_iters)
    weights = fs.weights.copy()
    means = []
    clipped = np.zeros((ell, R))
    for j in range(ell):
        A = fs.factors[j].copy()
        for r in range(R):
            col = A[:, r]
            if col.sum() < 0:
                col = -col
                weights[r] = -weights[r]
            neg = col < 0
            clipped[j, r] = -col[neg].sum()
            col = np.where(neg, 0.0, col)
            l1 = col.sum()
            if l1 < 1e-6:
                raise DegenerateTermError(f"view {j}, term {r}: l1 mass {l1:.3g} after clipping")
            A[:, r] = col / l1
            weights[r] *= l1
        means.append(A)
    negative_weights = int(np.sum(weights < 0))
    weights = np.clip(weights, 0.0, None)
    if weights.sum() <= 0:
        raise DegenerateTermError("all recovered weights are nonpositive")
    raw_total = float(weights.sum())
    weights = weights / raw_total
    diagnostics = {
        "clipped_mass": clipped,
        "max_clipped_mass": float(clipped.max()),
        "negative_weights_clipped": negative_weights,
        "raw_weight_total": raw_total,
        "condition_report": report.to_dict() if report is not None else None,
        "max_split_residual": float(np.max(report.split_residuals)) if report is not None else 0.0,
    }
    return weights, means, diagnostics


def learn(samples, R, cfg=None, n=None, refine_iters=100):
    """Estimate the moment tensor from samples, then :func:`learn_from_moment`."""
    T = empirical_moment(samples, n=n, sparse=False)
    return learn_from_moment(T, R, cfg, refine_iters=refine_iters)


def match_components(est_means, true_means):
    """Assignment on l1 distance of concatenated views.

    Returns ``(perm, distances)``: estimated component ``i`` matches true
    component ``perm[i]``; ``distances[i]`` is the largest per-view l1 error.
    """
    est = np.vstack(est_means)
    tru = np.vstack(true_means)
    cost = np.abs(est[:, :, None] - tru[:, None, :]).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = cols[np.argsort(rows)]
    per_view = np.array([[np.abs(e[:, i] - t[:, perm[i]]).sum() for e, t in zip(est_means, true_means)]
                         for i in range(est.shape[1])])
    return perm, per_view.max(axis=1)
