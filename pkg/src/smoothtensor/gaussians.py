"""Axis-aligned Gaussian mixtures learned from partitioned moment tensors.

Coordinates are split into ``l`` disjoint groups. Because each component has
a diagonal covariance, the noise in different groups is independent given the
component, so ``E[x_{S_1} (x) ... (x) x_{S_l}] = sum_i w_i (x)_t mu_i|S_t``
and a tensor decomposition returns every block of every mean up to a scale.

Learning runs in three passes:

1. decompose the main partitioned moment;
2. for every block ``t > 0``, decompose a moment over a partition that swaps
   halves of blocks ``0`` and ``t``; the overlaps fix the ratio of the block
   scales, so each mean is known up to one global factor ``s_i``;
3. read ``C_l = w_i s_i^l`` and ``C_{l+1} = w_i s_i^{l+1}`` from decompositions
   with ``l`` and ``l + 1`` groups; ``s_i = C_{l+1}/C_l`` and ``w_i = C_l/s_i^l``.

Variances then follow from one small least-squares system per coordinate.
Moments can come from samples (:class:`SampleMoments`) or be computed in
closed form from a model (:class:`ExactMoments`); the closed-form path is the
oracle that separates algorithm errors from sampling error.
"""
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._rng import as_generator
from .decompose import DecomposeConfig, decompose_overcomplete, refine_als
from .exceptions import (
    DegenerateTermError,
    IllConditionedError,
    MatchingAmbiguityError,
    PreconditionError,
    SplitResidualWarning,
)
from .tensor_core import DenseTensor, khatri_rao_many

__all__ = [
    "AxisAlignedGMM",
    "PartitionScheme",
    "GaussianLearnConfig",
    "SampleMoments",
    "ExactMoments",
    "sample",
    "random_smoothed_model",
    "partitioned_moment",
    "learn_means_weights",
    "learn_variances",
    "learn",
    "weight_from_scaled_vectors",
    "match_gmm",
]


@dataclass
class AxisAlignedGMM:
    """``k`` components in ``n`` dimensions with diagonal covariances.

    ``means`` and ``variances`` are ``n x k``; column ``i`` belongs to
    component ``i``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    mean_cap: float = math.inf

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        k = self.weights.size
        if self.means.shape[1] != k or self.variances.shape != self.means.shape:
            raise PreconditionError(
                f"means {self.means.shape} and variances {self.variances.shape} must both be n x {k}"
            )
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise PreconditionError("weights must be nonnegative and sum to 1")
        if not np.all(self.variances > 0):
            raise PreconditionError("variances must be strictly positive")
        if np.any(np.linalg.norm(self.means, axis=0) > self.mean_cap):
            raise PreconditionError(f"a mean exceeds the length cap {self.mean_cap}")

    @property
    def k(self):
        return self.weights.size

    @property
    def n(self):
        return self.means.shape[0]

    def to_json(self):
        """``{n, k, weights, means[component][coord], variances[component][coord]}``."""
        return {
            "n": self.n,
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": self.means.T.tolist(),
            "variances": self.variances.T.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        model = cls(obj["weights"], np.asarray(obj["means"], dtype=float).T,
                    np.asarray(obj["variances"], dtype=float).T)
        for key, val in (("n", model.n), ("k", model.k)):
            if key in obj and int(obj[key]) != val:
                raise PreconditionError(f"model JSON declares {key}={obj[key]} but data implies {val}")
        return model


def random_smoothed_model(n, k, rho, rng, mean_scale=1.0, var_range=(0.5, 1.5), min_weight=0.5):
    """Planted model with ``rho``-perturbed means.

    Base means are random directions of length ``mean_scale``; each coordinate
    then gets ``N(0, rho^2 / n)`` noise. Weights are ``min_weight / k`` plus a
    Dirichlet share of the rest.
    """
    rng = as_generator(rng)
    base = rng.standard_normal((n, k))
    base *= mean_scale / np.linalg.norm(base, axis=0)
    means = base + rng.normal(scale=rho / math.sqrt(n), size=(n, k))
    variances = rng.uniform(*var_range, size=(n, k))
    w = min_weight / k + (1 - min_weight) * rng.dirichlet(np.ones(k))
    return AxisAlignedGMM(w / w.sum(), means, variances)


def sample(model, N, seed):
    """Draw ``N`` points; returns an ``N x n`` array."""
    rng = as_generator(seed)
    comp = rng.choice(model.k, size=N, p=model.weights)
    z = rng.standard_normal((N, model.n))
    return model.means.T[comp] + z * np.sqrt(model.variances.T[comp])


class PartitionScheme:
    """``ell`` contiguous, near-equal groups of a coordinate list.

    Parameters
    ----------
    n : int
        Ambient dimension; coordinates default to ``range(n)``.
    ell : int
    coords : sequence of int, optional
        Restrict the partition to these coordinates (used when one coordinate
        is held out for variance estimation).
    """

    def __init__(self, n, ell, coords=None):
        coords = np.arange(n) if coords is None else np.asarray(coords, dtype=int)
        if ell < 1 or coords.size < ell:
            raise PreconditionError(f"cannot split {coords.size} coordinates into {ell} groups")
        if coords.size and (coords.min() < 0 or coords.max() >= n or np.unique(coords).size != coords.size):
            raise PreconditionError("partition coordinates must be distinct indices in [0, n)")
        self.n = int(n)
        self.ell = int(ell)
        self.coords = coords
        self.groups = [g.copy() for g in np.array_split(coords, ell)]

    def __repr__(self):
        return f"PartitionScheme(n={self.n}, groups={[g.tolist() for g in self.groups]})"

    def halves(self, t):
        """``(A, B)`` halves of group ``t``; ``A`` gets the smaller half."""
        g = self.groups[t]
        if g.size < 2:
            raise PreconditionError(f"group {t} has {g.size} coordinate(s); scale matching needs >= 2")
        h = g.size // 2
        return g[:h], g[h:]

    def swapped(self, t):
        """Groups with ``S'_0 = A_0 + A_t`` and ``S'_t = B_0 + B_t``; others unchanged."""
        if not 1 <= t < self.ell:
            raise PreconditionError(f"swap partner must be in [1, {self.ell}), got {t}")
        A0, B0 = self.halves(0)
        At, Bt = self.halves(t)
        groups = [g.copy() for g in self.groups]
        groups[0] = np.concatenate([A0, At])
        groups[t] = np.concatenate([B0, Bt])
        return groups

    @property
    def alt_groups(self):
        return self.swapped(1)

    def excluding(self, j):
        """Same number of groups over the coordinates other than ``j``."""
        return PartitionScheme(self.n, self.ell, self.coords[self.coords != j])


def _groups_for(scheme, which):
    if which == "main":
        return scheme.groups
    if which == "alt":
        return scheme.alt_groups
    if isinstance(which, (int, np.integer)):
        return scheme.swapped(int(which))
    raise PreconditionError(f"which must be 'main', 'alt' or a block index, got {which!r}")


class SampleMoments:
    """Empirical partitioned moments of an ``N x n`` sample matrix."""

    def __init__(self, X, chunk=100_000):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise PreconditionError("samples must be a nonempty N x n array")
        if not np.all(np.isfinite(X)):
            raise PreconditionError("samples contain non-finite values")
        self.X = X
        self.chunk = int(chunk)

    @property
    def n(self):
        return self.X.shape[1]

    def tensor(self, groups, square_coord=None):
        """Average of ``[x_j^2] * x_{S_1} (x) ... (x) x_{S_l}``."""
        groups = _check_groups(groups, self.n, square_coord)
        dims = tuple(g.size for g in groups)
        acc = np.zeros((dims[0], int(np.prod(dims[1:], dtype=int))))
        for lo in range(0, self.X.shape[0], self.chunk):
            Xc = self.X[lo:lo + self.chunk]
            rest = np.ones((Xc.shape[0], 1))
            for g in groups[1:]:
                rest = (rest[:, :, None] * Xc[:, g][:, None, :]).reshape(Xc.shape[0], -1)
            first = Xc[:, groups[0]]
            if square_coord is not None:
                first = first * (Xc[:, square_coord] ** 2)[:, None]
            acc += first.T @ rest
        return DenseTensor((acc / self.X.shape[0]).reshape(dims))


class ExactMoments:
    """Closed-form partitioned moments of a known model."""

    def __init__(self, model):
        self.model = model

    @property
    def n(self):
        return self.model.n

    def tensor(self, groups, square_coord=None):
        """``sum_i w_i [mu_ij^2 + sigma_ij^2] (x)_t mu_i|S_t``."""
        groups = _check_groups(groups, self.n, square_coord)
        m = self.model
        coef = m.weights.copy()
        if square_coord is not None:
            coef = coef * (m.means[square_coord] ** 2 + m.variances[square_coord])
        kr = khatri_rao_many([m.means[g] for g in groups])
        return DenseTensor((kr @ coef).reshape(tuple(g.size for g in groups)))


def _check_groups(groups, n, square_coord):
    groups = [np.asarray(g, dtype=int).ravel() for g in groups]
    if any(g.size == 0 for g in groups):
        raise PreconditionError("groups must be nonempty")
    allc = np.concatenate(groups)
    if allc.min() < 0 or allc.max() >= n:
        raise PreconditionError(f"group index out of range for n={n}")
    if np.unique(allc).size != allc.size:
        raise PreconditionError("groups must be disjoint")
    if square_coord is not None and (not 0 <= square_coord < n or square_coord in set(allc.tolist())):
        raise PreconditionError(f"squared coordinate {square_coord} must lie outside the groups")
    return groups


def _as_source(samples_or_source):
    if hasattr(samples_or_source, "tensor"):
        return samples_or_source
    if isinstance(samples_or_source, AxisAlignedGMM):
        return ExactMoments(samples_or_source)
    return SampleMoments(samples_or_source)


def partitioned_moment(samples, scheme, which="main"):
    """Partitioned moment tensor of shape ``|S_1| x ... x |S_l|``.

    ``samples`` is an ``N x n`` array or a moment source. ``which`` selects the
    main groups, ``"alt"`` (halves of blocks 0 and 1 swapped) or an integer
    ``t`` (halves of blocks 0 and ``t`` swapped).
    """
    return _as_source(samples).tensor(_groups_for(scheme, which))


@dataclass
class GaussianLearnConfig:
    """Tolerances for the Gaussian learner.

    Attributes
    ----------
    decompose : DecomposeConfig
    match_margin : float
        Second-best matching distance must be at least this multiple of the
        best one (distances are ``1 - mean |cos|``).
    match_floor : float
        Absolute floor on the best distance in the margin test.
    block_floor : float
        Half-block norms below this make a scale ratio unreadable.
    var_floor : float
        Negative variance estimates are clamped to this value.
    cond_floor : float
        Smallest accepted ``sigma_min / sigma_max`` of a variance system.
    refine_iters : int
        Alternating least-squares sweeps after each decomposition; 0 disables.
    """

    decompose: DecomposeConfig = field(default_factory=DecomposeConfig)
    match_margin: float = 2.0
    match_floor: float = 1e-9
    block_floor: float = 1e-8
    var_floor: float = 1e-9
    cond_floor: float = 1e-10
    refine_iters: int = 100


def _unit(v):
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 0 else v


def _similarity(pieces_a, pieces_b):
    """Mean ``|cos|`` over corresponding pieces; ``pieces_x[p]`` is (len_p, k)."""
    k_a = pieces_a[0].shape[1]
    k_b = pieces_b[0].shape[1]
    S = np.zeros((k_a, k_b))
    for Pa, Pb in zip(pieces_a, pieces_b):
        na = np.linalg.norm(Pa, axis=0)
        nb = np.linalg.norm(Pb, axis=0)
        na[na == 0] = 1.0
        nb[nb == 0] = 1.0
        S += np.abs((Pa / na).T @ (Pb / nb))
    return S / len(pieces_a)


def _match(S, margin, floor, what):
    """Assignment maximizing similarity with a best/second-best margin check.

    Returns ``(perm, margins)``: row ``i`` is matched to column ``perm[i]``.
    """
    D = 1.0 - S
    rows, cols = linear_sum_assignment(D)
    perm = cols[np.argsort(rows)]
    k = D.shape[0]
    margins = np.full(k, math.inf)
    collisions = []
    for i in range(k):
        best = max(D[i, perm[i]], floor)
        others = np.delete(D[i], perm[i])
        if others.size:
            second = float(others.min())
            margins[i] = second / best
            if second < margin * best:
                collisions.append((i, int(perm[i]), int(np.delete(np.arange(k), perm[i])[others.argmin()])))
    if collisions:
        raise MatchingAmbiguityError(
            f"{what}: ambiguous component match for (component, chosen, runner-up) {collisions}",
            collisions=collisions,
        )
    return perm, margins


def _positions(group, coords):
    """Indices into ``group`` of the coordinates in ``coords`` (order kept)."""
    where = {c: p for p, c in enumerate(group.tolist())}
    return np.array([where[c] for c in coords.tolist()], dtype=int)


def _ratio(a, b):
    """Least-squares ``c`` with ``c * b ~ a``."""
    return float(a @ b / (b @ b))


def _decompose(T, k, cfg, name, diag):
    """Decompose, then ALS-polish; split residuals go to ``diag``, not warnings."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SplitResidualWarning)
        fs, rep = decompose_overcomplete(T, k, cfg.decompose, return_report=True)
    entry = rep.to_dict()
    entry["max_split_residual"] = float(np.max(rep.split_residuals)) if rep.split_residuals else 0.0
    if cfg.refine_iters > 0:
        fs, info = refine_als(T, fs, max_iter=cfg.refine_iters)
        entry.update(refine_iterations=info["iterations"], relative_fit=info["relative_fit"])
    diag["condition_reports"][name] = entry
    return fs


def learn_means_weights(samples, k, scheme, cfg=None):
    """Recover weights and means from partitioned moments.

    Parameters
    ----------
    samples : array (N, n), AxisAlignedGMM or moment source
        A model means exact (closed-form) moments.
    k : int
    scheme : PartitionScheme
        Needs ``ell >= 3`` and at least two coordinates in every group.
    cfg : GaussianLearnConfig, optional

    Returns
    -------
    weights : (k,) array, sums to 1
    means : (n, k) array
    norms : (k,) array
        ``C_{l+1} / C_l`` per component, the recovered mean length.
    diagnostics : dict
    """
    cfg = cfg or GaussianLearnConfig()
    src = _as_source(samples)
    ell = scheme.ell
    if ell < 3:
        raise PreconditionError("the Gaussian learner needs ell >= 3 groups")
    if src.n != scheme.n:
        raise PreconditionError(f"scheme is for n={scheme.n}, moments are for n={src.n}")
    groups = scheme.groups
    diag = {
        "k_bound_theory": scheme.n ** ((ell - 1) // 2) / (2 * ell),
        "condition_reports": {},
        "matching_margins": {},
    }

    # 1. main partition: unit blocks a[t][:, i] and term weights lam
    fs = _decompose(src.tensor(groups), k, cfg, "main", diag)
    a = fs.factors
    lam = fs.weights

    # 2. block scale ratios gamma[t][i] = c_t / c_0 from swapped partitions
    gamma = np.ones((ell, k))
    route_gap = np.zeros((ell, k))
    A0, B0 = scheme.halves(0)
    for t in range(1, ell):
        alt = scheme.swapped(t)
        b = _decompose(src.tensor(alt), k, cfg, f"swap_{t}", diag).factors
        At, Bt = scheme.halves(t)
        # compare every overlap between an alt block and a main block
        pieces_main, pieces_alt = [], []
        for u, gu in enumerate(alt):
            for v, gv in enumerate(groups):
                common = np.intersect1d(gu, gv, assume_unique=True)
                if common.size:
                    pieces_main.append(a[v][_positions(gv, common)])
                    pieces_alt.append(b[u][_positions(gu, common)])
        perm, margins = _match(_similarity(pieces_main, pieces_alt), cfg.match_margin, cfg.match_floor,
                               f"swap {t}")
        diag["matching_margins"][f"swap_{t}"] = margins.tolist()
        for i in range(k):
            p = perm[i]
            a0 = a[0][:, i]
            at = a[t][:, i]
            # route A reads both scales off alt block 0 = A_0 + A_t, route B off
            # alt block t = B_0 + B_t. With c' the alt block's scale,
            # y0 = (c_0/c') x0 and yt = (c_t/c') xt, so gamma = ratio_t / ratio_0.
            routes = []
            for half0, halft, alt_idx in ((A0, At, 0), (B0, Bt, t)):
                g_alt = alt[alt_idx]
                x0 = a0[_positions(groups[0], half0)]
                y0 = b[alt_idx][_positions(g_alt, half0), p]
                xt = at[_positions(groups[t], halft)]
                yt = b[alt_idx][_positions(g_alt, halft), p]
                score = min(np.linalg.norm(v) for v in (x0, y0, xt, yt))
                if score >= cfg.block_floor:
                    routes.append((score, _ratio(yt, xt) / _ratio(y0, x0)))
            if not routes:
                raise DegenerateTermError(f"component {i}: half-blocks of blocks 0 and {t} are too small "
                                          f"to read a scale ratio (floor {cfg.block_floor})")
            gamma[t, i] = max(routes, key=lambda r: r[0])[1]
            if len(routes) == 2:
                route_gap[t, i] = abs(routes[0][1] - routes[1][1]) / abs(gamma[t, i])
    diag["scale_route_gap"] = float(route_gap.max())

    # assemble unit directions u_hat
    n = scheme.n
    U = np.zeros((n, k))
    for t, g in enumerate(groups):
        U[g] = a[t] * gamma[t]
    U /= np.linalg.norm(U, axis=0)
    beta = np.prod([np.sum(U[g] * a[t], axis=0) for t, g in enumerate(groups)], axis=0)
    if np.any(np.abs(beta) < cfg.block_floor):
        raise DegenerateTermError("a mean has a near-zero block in the main partition")
    C_ell = lam / beta

    # 3. l + 1 groups: C_{l+1}
    plus = PartitionScheme(scheme.n, ell + 1, scheme.coords)
    fs_p = _decompose(src.tensor(plus.groups), k, cfg, "plus", diag)
    S = _similarity([U[g] for g in plus.groups], list(fs_p.factors))
    perm, margins = _match(S, cfg.match_margin, cfg.match_floor, "l+1 run")
    diag["matching_margins"]["plus"] = margins.tolist()
    beta_p = np.prod([np.sum(U[g] * fs_p.factors[t][:, perm], axis=0) for t, g in enumerate(plus.groups)], axis=0)
    if np.any(np.abs(beta_p) < cfg.block_floor):
        raise DegenerateTermError("a mean has a near-zero block in the (l+1)-group partition")
    C_plus = fs_p.weights[perm] / beta_p

    s = C_plus / C_ell
    if np.any(s == 0) or not np.all(np.isfinite(s)):
        raise DegenerateTermError("could not read mean lengths from the C ratio")
    means = U * s
    norms = np.abs(s)
    raw_w = C_ell / s**ell
    if np.any(raw_w <= 0):
        raise DegenerateTermError(f"recovered nonpositive weights {raw_w.tolist()}")

    lemma_w = np.array([
        weight_from_scaled_vectors(
            np.sign(s[i]) * abs(C_ell[i]) ** (1 / ell) * U[:, i],
            np.sign(s[i]) * abs(C_plus[i]) ** (1 / (ell + 1)) * U[:, i],
            ell + 1,
        )
        for i in range(k)
    ])
    diag["weight_lemma_gap"] = float(np.max(np.abs(lemma_w - raw_w)))
    diag["raw_weight_total"] = float(raw_w.sum())
    diag["C_ell"] = C_ell.tolist()
    diag["C_ell_plus_1"] = C_plus.tolist()
    weights = raw_w / raw_w.sum()
    return weights, means, norms, diag


def learn_variances(samples, weights, means, scheme, cfg=None):
    """Per-coordinate variances from ``E[x_j^2 (x)_t x_{S_t}]`` with ``j`` held out.

    Returns ``(variances, diagnostics)``; variances is ``n x k``.
    """
    cfg = cfg or GaussianLearnConfig()
    src = _as_source(samples)
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    n, k = means.shape
    if weights.size != k:
        raise PreconditionError("weights and means disagree on k")
    if np.any(weights <= 0):
        raise PreconditionError("weights must be positive")
    var = np.empty((n, k))
    clamped = 0
    worst_cond = math.inf
    for j in range(n):
        sub = scheme.excluding(j)
        M = khatri_rao_many([means[g] for g in sub.groups])
        sv = np.linalg.svd(M, compute_uv=False)
        ratio = sv[-1] / sv[0] if sv[0] > 0 else 0.0
        worst_cond = min(worst_cond, ratio)
        if ratio < cfg.cond_floor:
            raise IllConditionedError(
                f"coordinate {j}: variance system has sigma_min/sigma_max = {ratio:.3g} < {cfg.cond_floor:g}"
            )
        N_j = src.tensor(sub.groups, square_coord=j).data
        z, *_ = np.linalg.lstsq(M, N_j, rcond=None)
        est = z / weights - means[j] ** 2
        low = est < cfg.var_floor
        clamped += int(low.sum())
        var[j] = np.where(low, cfg.var_floor, est)
    return var, {"variance_clamped": clamped, "variance_min_relative_sigma": float(worst_cond)}


def learn(samples, k, ell, cfg=None):
    """Full pipeline; returns ``(AxisAlignedGMM, diagnostics)``."""
    cfg = cfg or GaussianLearnConfig()
    src = _as_source(samples)
    scheme = PartitionScheme(src.n, ell)
    weights, means, norms, diag = learn_means_weights(src, k, scheme, cfg)
    variances, vdiag = learn_variances(src, weights, means, scheme, cfg)
    diag.update(vdiag)
    diag["mean_norms"] = norms.tolist()
    return AxisAlignedGMM(weights, means, variances), diag


def weight_from_scaled_vectors(u, v, ell):
    """Weight ``w`` from ``u ~ w^{1/(l-1)} mu`` and ``v ~ w^{1/l} mu``.

    Returns ``(||u||^2 / |<u, v>|)^{l (l - 1)}``: the ratio cancels ``mu`` and
    leaves ``w^{1/(l-1) - 1/l} = w^{1/(l (l - 1))}``.
    """
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if ell < 2:
        raise PreconditionError("ell must be >= 2")
    uu = float(u @ u)
    if uu == 0:
        raise PreconditionError("u must be nonzero")
    uv = abs(float(u @ v))
    if uv == 0:
        raise PreconditionError("u and v are orthogonal; no weight can be read")
    return (uu / uv) ** (ell * (ell - 1))


def match_gmm(est, truth):
    """Assignment on mean distance. ``perm[i]`` is the true component for estimate ``i``."""
    D = np.linalg.norm(est.means[:, :, None] - truth.means[:, None, :], axis=0)
    rows, cols = linear_sum_assignment(D)
    return cols[np.argsort(rows)]
