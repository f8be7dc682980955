"""CP decomposition by simultaneous diagonalization, plus the flattening driver.

The order-3 routine follows the classical recipe: contract the third mode with
two random unit vectors ``a, b``, eigendecompose ``T_a T_b^{-1}`` (whose
eigenvectors are the mode-1 factors) and ``(T_b^{-1} T_a)^T`` (mode-2
factors), pair the two eigenbases through their shared eigenvalues, and solve
a least-squares system for the mode-3 factors. Higher-order tensors are
flattened to order three first, so the Khatri-Rao structure of the grouped
factors is what has to be well conditioned.
"""
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ._rng import derive_rng
from .exceptions import (
    AlgorithmicFailure,
    PreconditionError,
    RankDeficiencyError,
    RetryExhaustedError,
    SplitResidualWarning,
)
from .linalg import condition_number, eig_nonsymmetric, svd
from .tensor_core import DenseTensor, FactorSet, as_array, flatten, khatri_rao, khatri_rao_many

__all__ = [
    "DecomposeConfig",
    "ConditionReport",
    "preprocess_to_full_rank",
    "decompose_full_rank",
    "decompose",
    "decompose_overcomplete",
    "tripartition",
    "split_rank_one",
    "recovery_error",
    "term_distances",
    "refine_als",
]


@dataclass
class DecomposeConfig:
    """Knobs for :func:`decompose_full_rank` and the drivers built on it.

    Attributes
    ----------
    rank : int or None
        Number of terms; drivers that take ``R`` explicitly override it.
    max_retries : int
        Random contraction pairs tried before giving up.
    pairing_tolerance : float
        Largest accepted gap between paired eigenvalues, as a fraction of the
        observed eigenvalue separation.
    rng_seed : int
    noise_floor : float
        Absolute floor for the ``R``-th singular value of each unfolding.
    condition_report : bool
        Compute condition numbers of the recovered factors.
    split_tolerance : float
        Relative residual above which splitting a flattened factor back into
        rank one triggers a warning.
    """

    rank: int = None
    max_retries: int = 5
    pairing_tolerance: float = 0.25
    rng_seed: int = 0
    noise_floor: float = 0.0
    condition_report: bool = True
    split_tolerance: float = 1e-6

    def __post_init__(self):
        if self.max_retries < 1:
            raise PreconditionError("max_retries must be >= 1")
        if not self.pairing_tolerance > 0:
            raise PreconditionError("pairing_tolerance must be > 0")


@dataclass
class ConditionReport:
    kappa_U: float = math.nan
    kappa_V: float = math.nan
    min_column_angle_W: float = math.nan
    sep_observed: float = math.nan
    retries_used: int = 0
    split_residuals: list = field(default_factory=list)

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}


def _min_column_distance(W):
    """Sign-invariant ``min_{i != j} ||w_i/|w_i| - w_j/|w_j|||``."""
    R = W.shape[1]
    if R < 2:
        return math.inf
    Wn = W / np.linalg.norm(W, axis=0)
    G = np.clip(np.abs(Wn.T @ Wn), 0.0, 1.0)
    np.fill_diagonal(G, 0.0)
    return float(np.sqrt(max(2.0 - 2.0 * G.max(), 0.0)))


def _rank_floor(s, noise_floor):
    return max(noise_floor, 1e-12 * (s[0] if s.size else 0.0))


def preprocess_to_full_rank(T, R, noise_floor=0.0):
    """Project an ``n x m x p`` tensor onto the top-``R`` mode-1 and mode-2 subspaces.

    Returns ``(core, P1, P2)`` with ``core`` of shape (R, R, p) and orthonormal
    bases ``P1`` (n x R), ``P2`` (m x R) such that
    ``T ~= core x_1 P1 x_2 P2``. A factor ``u`` of the core maps back as
    ``P1 @ u``.
    """
    arr = as_array(T)
    if arr.ndim != 3:
        raise PreconditionError(f"expected an order-3 tensor, got order {arr.ndim}")
    n, m, p = arr.shape
    R = int(R)
    if not 1 <= R <= min(n, m):
        raise PreconditionError(f"rank {R} must satisfy 1 <= R <= min(n, m) = {min(n, m)}")

    bases = []
    work = arr
    for mode in (0, 1):
        unf = np.moveaxis(work, mode, 0).reshape(work.shape[mode], -1)
        U, s, _ = svd(unf)
        floor = _rank_floor(s, noise_floor)
        if s.size < R or s[R - 1] <= floor:
            raise RankDeficiencyError(
                f"mode-{mode + 1} unfolding has sigma_{R} = "
                f"{(s[R - 1] if s.size >= R else 0.0):.3g} <= floor {floor:.3g}; "
                f"spectrum {np.array2string(s[:R + 2], precision=3)}",
                spectrum=s,
            )
        P = U[:, :R]
        bases.append(P)
        work = np.moveaxis(np.tensordot(P.T, np.moveaxis(work, mode, 0), axes=1), 0, mode)
    return DenseTensor(work), bases[0], bases[1]


def _pair_eigs(lam_u, lam_v, tol_frac):
    """Sorted pairing of two real spectra; returns (sep, worst gap, ok)."""
    sep = float(np.min(np.diff(lam_u))) if lam_u.size > 1 else math.inf
    gaps = np.abs(lam_u - lam_v)
    worst = float(np.max(gaps)) if gaps.size else 0.0
    return sep, worst, worst <= tol_frac * sep


def decompose_full_rank(T, cfg=None, rank=None):
    """Simultaneous diagonalization of an ``R x R x p`` tensor.

    Returns ``(FactorSet, ConditionReport)``; the FactorSet is canonical.

    Raises
    ------
    RetryExhaustedError
        Every contraction pair produced complex or colliding eigenvalues, a
        singular ``T_b``, or a failed pairing.
    """
    cfg = cfg or DecomposeConfig()
    arr = as_array(T)
    if arr.ndim != 3 or arr.shape[0] != arr.shape[1]:
        raise PreconditionError(f"expected an R x R x p tensor, got shape {arr.shape}")
    R, _, p = arr.shape
    if rank is not None and int(rank) != R:
        raise PreconditionError(f"tensor is {R} x {R} x {p} but rank {rank} was requested")

    if R == 1:
        w = arr[0, 0, :].copy()
        fs = FactorSet(np.ones(1), [np.ones((1, 1)), np.ones((1, 1)), w[:, None]]).canonical()
        return fs, ConditionReport(1.0, 1.0, math.inf, math.inf, 0)

    reasons = []
    last_sep = math.nan
    for attempt in range(cfg.max_retries):
        rng = derive_rng(cfg.rng_seed, "decompose", attempt)
        a = rng.standard_normal(p)
        b = rng.standard_normal(p)
        a /= np.linalg.norm(a)
        b /= np.linalg.norm(b)
        Ta = arr @ a
        Tb = arr @ b
        sb = np.linalg.svd(Tb, compute_uv=False)
        if sb[-1] <= 1e3 * np.finfo(float).eps * sb[0]:
            reasons.append(f"attempt {attempt}: T_b numerically singular (cond {sb[0] / max(sb[-1], 1e-300):.3g})")
            continue
        M_u = np.linalg.solve(Tb.T, Ta.T).T  # T_a T_b^{-1}
        M_v = np.linalg.solve(Tb, Ta).T  # (T_b^{-1} T_a)^T
        try:
            eu = eig_nonsymmetric(M_u)
            ev = eig_nonsymmetric(M_v)
        except AlgorithmicFailure as exc:
            reasons.append(f"attempt {attempt}: {exc}")
            continue
        if not (eu.is_real and ev.is_real):
            reasons.append(f"attempt {attempt}: complex eigenvalues")
            continue
        sep, worst, ok = _pair_eigs(eu.eigenvalues, ev.eigenvalues, cfg.pairing_tolerance)
        last_sep = sep
        scale = max(float(np.max(np.abs(eu.eigenvalues))), np.finfo(float).tiny)
        if sep <= 1e-13 * scale:
            reasons.append(f"attempt {attempt}: eigenvalue collision (sep {sep:.3g})")
            continue
        if not ok:
            reasons.append(
                f"attempt {attempt}: pairing gap {worst:.3g} exceeds "
                f"{cfg.pairing_tolerance} x sep {sep:.3g}"
            )
            continue

        U = eu.eigenvectors
        V = ev.eigenvectors
        KR = khatri_rao(U, V)
        Wt, *_ = np.linalg.lstsq(KR, arr.reshape(R * R, p), rcond=None)
        fs = FactorSet(np.ones(R), [U, V, Wt.T]).canonical()
        report = ConditionReport(sep_observed=sep, retries_used=attempt)
        if cfg.condition_report:
            report.kappa_U = condition_number(fs.factors[0])
            report.kappa_V = condition_number(fs.factors[1])
            report.min_column_angle_W = _min_column_distance(fs.factors[2])
        return fs, report

    raise RetryExhaustedError(
        f"simultaneous diagonalization failed after {cfg.max_retries} attempts: " + "; ".join(reasons),
        sep_observed=last_sep,
        attempts=cfg.max_retries,
    )


def decompose(T, R, cfg=None):
    """Order-3 CP decomposition of an ``n x m x p`` tensor with ``R <= min(n, m)``.

    Returns ``(FactorSet, ConditionReport)``.
    """
    cfg = cfg or DecomposeConfig()
    core, P1, P2 = preprocess_to_full_rank(T, R, cfg.noise_floor)
    fs, report = decompose_full_rank(core, cfg)
    U = P1 @ fs.factors[0]
    V = P2 @ fs.factors[1]
    return FactorSet(fs.weights, [U, V, fs.factors[2]]).canonical(), report


def tripartition(order):
    """Modes grouped as (first h, next h, rest) with ``h = (order - 1) // 2``."""
    if order < 3:
        raise PreconditionError(f"flattening driver needs order >= 3, got {order}")
    h = (order - 1) // 2
    return [list(range(0, h)), list(range(h, 2 * h)), list(range(2 * h, order))]


def split_rank_one(column, dims, max_iter=50, tol=1e-14):
    """Best rank-one factorization of ``column`` reshaped to ``dims``.

    Returns ``(scale, vectors, relative_residual)`` with unit ``vectors``.
    Two modes use the SVD; three or more use higher-order power iteration
    started from the leading left singular vectors of each unfolding.
    """
    dims = tuple(int(d) for d in dims)
    col = np.asarray(column, dtype=float).ravel()
    norm = np.linalg.norm(col)
    if len(dims) == 1:
        if norm == 0:
            return 0.0, [col.copy()], 0.0
        return float(norm), [col / norm], 0.0
    X = col.reshape(dims)
    if len(dims) == 2:
        U, s, Vt = np.linalg.svd(X)
        vecs = [U[:, 0], Vt[0]]
        scale = float(s[0])
    else:
        vecs = []
        for mode in range(len(dims)):
            U, _, _ = np.linalg.svd(np.moveaxis(X, mode, 0).reshape(dims[mode], -1), full_matrices=False)
            vecs.append(U[:, 0])
        scale = 0.0
        for _ in range(max_iter):
            prev = scale
            for mode in range(len(dims)):
                Y = X
                for other in sorted((o for o in range(len(dims)) if o != mode), reverse=True):
                    Y = np.tensordot(Y, vecs[other], axes=([other], [0]))
                nrm = np.linalg.norm(Y)
                if nrm == 0:
                    break
                vecs[mode] = Y / nrm
                scale = float(nrm)
            if abs(scale - prev) <= tol * max(scale, 1.0):
                break
        Y = X
        for mode in reversed(range(len(dims))):
            Y = np.tensordot(Y, vecs[mode], axes=([mode], [0]))
        scale = float(Y)
    approx = scale * vecs[0]
    for v in vecs[1:]:
        approx = np.multiply.outer(approx, v)
    resid = float(np.linalg.norm(approx.ravel() - col) / norm) if norm > 0 else 0.0
    return scale, vecs, resid


def decompose_overcomplete(T, R, cfg=None, return_report=False):
    """Decompose an order-``l >= 3`` tensor by flattening to order three.

    Modes are grouped as in :func:`tripartition`; the order-3 result is split
    back into per-mode unit vectors. Returns a canonical FactorSet, or
    ``(FactorSet, ConditionReport)`` with ``return_report=True``; the report's
    ``split_residuals`` hold one relative residual per term and group.
    """
    cfg = cfg or DecomposeConfig()
    arr = as_array(T)
    groups = tripartition(arr.ndim)
    flat = flatten(arr, groups)
    fs3, report = decompose(flat, R, cfg)

    factors = [np.empty((d, R)) for d in arr.shape]
    weights = fs3.weights.copy()
    residuals = []
    for r in range(R):
        per_term = []
        for g, modes in enumerate(groups):
            scale, vecs, resid = split_rank_one(fs3.factors[g][:, r], [arr.shape[m] for m in modes])
            weights[r] *= scale
            for m, v in zip(modes, vecs):
                factors[m][:, r] = v
            per_term.append(resid)
            if resid > cfg.split_tolerance:
                warnings.warn(
                    f"term {r}, mode group {modes}: rank-one split residual {resid:.3g}",
                    SplitResidualWarning,
                    stacklevel=2,
                )
        residuals.append(per_term)
    report.split_residuals = residuals
    fs = FactorSet(weights, factors).canonical()
    return (fs, report) if return_report else fs


def refine_als(T, fs, max_iter=100, tol=1e-12):
    """Polish a CP decomposition by alternating least squares.

    Each sweep solves for one mode's factor with the others fixed, using the
    normal equations ``A_m (Hadamard_{j != m} A_j^T A_j) = T_(m) KR_{j != m} A_j``.
    Starting from an exact decomposition this is a fixed point, so exact
    inputs pass through unchanged to rounding; on noisy inputs it uses every
    entry of the tensor rather than two random contractions.

    Returns ``(FactorSet, info)`` with ``info = {"iterations", "relative_fit"}``;
    the FactorSet is canonical.
    """
    arr = as_array(T)
    if fs.dims != arr.shape:
        raise PreconditionError(f"factor dims {fs.dims} do not match tensor shape {arr.shape}")
    order = arr.ndim
    factors = [fs.factors[0] * fs.weights] + [f.copy() for f in fs.factors[1:]]
    unfoldings = [np.moveaxis(arr, m, 0).reshape(arr.shape[m], -1) for m in range(order)]
    norm_T = float(np.linalg.norm(arr))
    prev = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        for m in range(order):
            others = [factors[j] for j in range(order) if j != m]
            gram = np.ones((fs.rank, fs.rank))
            for f in others:
                gram *= f.T @ f
            rhs = unfoldings[m] @ khatri_rao_many(others)
            try:
                factors[m] = np.linalg.solve(gram, rhs.T).T
            except np.linalg.LinAlgError:
                factors[m] = rhs @ np.linalg.pinv(gram)
        resid = float(np.linalg.norm(arr.ravel() - khatri_rao_many(factors).sum(axis=1)))
        if prev - resid <= tol * max(norm_T, 1e-300):
            prev = resid
            break
        prev = resid
    out = FactorSet(np.ones(fs.rank), factors).canonical()
    return out, {"iterations": it, "relative_fit": prev / norm_T if norm_T > 0 else 0.0}


def term_distances(found, truth):
    """Frobenius distances between all pairs of weighted rank-one terms, shape (R, R)."""
    from scipy.spatial.distance import cdist

    return cdist(found.terms_matrix(), truth.terms_matrix())


def _bottleneck_assignment(D):
    """Permutation minimizing the largest assigned entry of ``D``."""
    vals = np.unique(D)
    lo, hi = 0, vals.size - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        cost = (D > vals[mid]).astype(float)
        rows, cols = linear_sum_assignment(cost)
        if cost[rows, cols].sum() == 0:
            best = cols
            hi = mid - 1
        else:
            lo = mid + 1
    return best


def recovery_error(found, truth, return_perm=False):
    """Max per-term Frobenius error, minimized over term permutations.

    ``perm[i]`` is the index in ``truth`` matched to term ``i`` of ``found``.
    """
    if found.rank != truth.rank:
        raise PreconditionError(f"rank mismatch: {found.rank} vs {truth.rank}")
    if found.dims != truth.dims:
        raise PreconditionError(f"dims mismatch: {found.dims} vs {truth.dims}")
    D = term_distances(found, truth)
    perm = _bottleneck_assignment(D)
    err = float(np.max(D[np.arange(found.rank), perm]))
    return (err, perm) if return_perm else err
