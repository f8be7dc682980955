"""Matrix kernels: SVD, nonsymmetric eigendecomposition, Kruskal-rank probes.

Dense factorizations are delegated to LAPACK through numpy; what this module
adds is the contract around them (sorting, normalization, tolerances, explicit
failure modes) and the spectral quantities the decomposition analysis uses.
"""
import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    BudgetExceededError,
    ConvergenceError,
    DefectiveMatrixError,
    DegenerateInputWarning,
    PreconditionError,
)
from .tensor_core import khatri_rao

__all__ = [
    "EigenDecomposition",
    "RobustRankReport",
    "svd",
    "eig_nonsymmetric",
    "leave_one_out_distance",
    "krank_exhaustive",
    "krank_sampled",
    "krank_additive_check",
    "eigenvalue_separation",
    "small_combination",
    "eig_perturbation_bound",
    "eigvec_deviation",
    "condition_number",
    "numerical_rank_tol",
]

#: relative cutoff used wherever "linearly independent" needs a number
RANK_RTOL = 1e-9
#: default number of column subsets an exhaustive k-rank may inspect
KRANK_BUDGET = 10**6


def _finite_matrix(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise PreconditionError(f"{name} must be a matrix, got ndim={A.ndim}")
    if not np.all(np.isfinite(A)):
        raise PreconditionError(f"{name} has non-finite entries")
    return A


def svd(A):
    """Thin SVD ``A = U @ diag(s) @ V.T`` with ``s`` descending.

    Returns ``(U, s, V)``; note ``V`` (not ``V.T``).
    """
    A = _finite_matrix(A)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    return U, s, Vt.T


def condition_number(A):
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s[-1] == 0:
        return math.inf
    return float(s[0] / s[-1])


@dataclass
class EigenDecomposition:
    """Eigenpairs of a square matrix, sorted by (real, imag) ascending.

    ``eigenvectors[:, i]`` is unit-norm with its largest-magnitude entry made
    real-positive. ``residuals[i] = ||M v_i - lambda_i v_i||``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    is_real: bool
    residuals: np.ndarray

    @property
    def max_residual(self):
        return float(np.max(self.residuals)) if self.residuals.size else 0.0


def eig_nonsymmetric(M, cluster_tol=1e-10, defect_cond=1e12):
    """Full eigendecomposition of a real square matrix.

    When all computed eigenvalues are real the eigenvectors are returned as a
    real matrix. Complex pairs are kept (``is_real=False``) so the caller can
    decide to redraw; this routine does not try to realify them.

    Raises
    ------
    ConvergenceError
        LAPACK hit its QR iteration cap.
    DefectiveMatrixError
        Some eigenvalues agree to ``cluster_tol`` (relative) and the
        eigenvector matrix has condition number above ``defect_cond``.
    """
    M = _finite_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise PreconditionError(f"eig_nonsymmetric needs a square matrix, got {M.shape}")
    try:
        lam, vecs = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigendecomposition did not converge: {exc}") from exc

    is_real = bool(np.all(lam.imag == 0))
    if is_real:
        lam = lam.real
        vecs = vecs.real
    order = np.lexsort((np.imag(lam), np.real(lam)))
    lam = lam[order]
    vecs = vecs[:, order]
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    pivots = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])]
    vecs = vecs * (np.abs(pivots) / pivots)
    if is_real:
        vecs = vecs.real

    n = lam.size
    if n > 1:
        scale = max(np.max(np.abs(lam)), np.finfo(float).tiny)
        gaps = np.abs(lam[:, None] - lam[None, :])
        np.fill_diagonal(gaps, np.inf)
        close = np.argwhere(np.triu(gaps <= cluster_tol * scale, 1))
        if close.size:
            kappa = condition_number(vecs)
            if kappa > defect_cond:
                clustered = sorted({complex(lam[i]) for pair in close for i in pair}, key=lambda z: (z.real, z.imag))
                raise DefectiveMatrixError(
                    f"eigenvalues {clustered} cluster and the eigenvector basis has "
                    f"condition number {kappa:.3g}; matrix is numerically defective",
                    clustered=clustered,
                )

    residuals = np.linalg.norm(M @ vecs - vecs * lam, axis=0)
    return EigenDecomposition(lam, vecs, is_real, residuals)


def leave_one_out_distance(A):
    """``min_i dist(A_i, span{A_j : j != i})``.

    A single-column input has no "other columns"; its norm is returned and a
    :class:`DegenerateInputWarning` is emitted.
    """
    A = _finite_matrix(A)
    R = A.shape[1]
    if R == 1:
        warnings.warn(
            "leave-one-out distance of a single column is undefined; returning its norm",
            DegenerateInputWarning,
            stacklevel=2,
        )
        return float(np.linalg.norm(A[:, 0]))
    best = math.inf
    for i in range(R):
        others = np.delete(A, i, axis=1)
        Q, s, _ = np.linalg.svd(others, full_matrices=False)
        tol = RANK_RTOL * (s[0] if s.size else 0.0)
        Q = Q[:, s > tol] if s.size else Q[:, :0]
        col = A[:, i]
        resid = col - Q @ (Q.T @ col)
        best = min(best, float(np.linalg.norm(resid)))
    return best


@dataclass
class RobustRankReport:
    """Outcome of a robust Kruskal-rank probe.

    ``tau`` is the threshold parameter (1/tau is the required smallest singular
    value); ``min_sigma`` is the smallest ``sigma_k`` observed over the sets
    that certify ``k_rank``. Sampled reports are upper-bound estimates.
    """

    k_rank: int
    tau: float
    mode: str
    sets_checked: int
    min_sigma: float = math.nan

    @property
    def certified(self):
        return self.mode == "exhaustive"


def numerical_rank_tol(A):
    """Absolute cutoff ``RANK_RTOL * sigma_max(A)``."""
    A = np.asarray(A, dtype=float)
    smax = np.linalg.norm(A, 2) if A.size else 0.0
    return RANK_RTOL * smax


def _threshold(A, tau):
    if tau is None or math.isinf(tau):
        return numerical_rank_tol(A), True
    if tau <= 0:
        raise PreconditionError("tau must be positive")
    return 1.0 / tau, False


def _subset_sigma_min(A, subsets, chunk=20000):
    subsets = np.asarray(subsets, dtype=int)
    out = np.empty(len(subsets))
    for lo in range(0, len(subsets), chunk):
        block = A[:, subsets[lo:lo + chunk]]  # (n, c, k)
        block = np.transpose(block, (1, 0, 2))
        out[lo:lo + chunk] = np.linalg.svd(block, compute_uv=False)[:, -1]
    return out


def krank_exhaustive(A, tau=None, max_k=None, budget=KRANK_BUDGET):
    """Certified tau-robust Kruskal rank by enumerating column subsets.

    The largest ``k`` such that every ``n x k`` column submatrix has
    ``sigma_k >= 1/tau``. ``tau=None`` (or inf) gives the exact k-rank with the
    numerical cutoff ``1e-9 * sigma_max(A)``. The search stops at the first
    failing ``k`` (removing a column cannot lower the smallest singular value,
    so larger ``k`` would fail too).
    """
    A = _finite_matrix(A)
    n, R = A.shape
    thr, strict = _threshold(A, tau)
    kmax = min(n, R) if max_k is None else min(int(max_k), n, R)
    total = sum(math.comb(R, k) for k in range(1, kmax + 1))
    if total > budget:
        raise BudgetExceededError(
            f"exhaustive k-rank needs up to {total} column subsets (budget {budget}); "
            "use krank_sampled for a non-certified estimate",
            count=total,
        )
    checked = 0
    k_rank = 0
    min_sigma = math.inf
    for k in range(1, kmax + 1):
        subsets = list(itertools.combinations(range(R), k))
        sig = _subset_sigma_min(A, subsets)
        checked += len(subsets)
        worst = float(np.min(sig))
        ok = worst > thr if strict else worst >= thr
        if not ok:
            break
        k_rank = k
        min_sigma = worst
    return RobustRankReport(k_rank, math.inf if tau is None else float(tau), "exhaustive", checked,
                            min_sigma if k_rank else math.nan)


def krank_sampled(A, tau=None, n_samples=1000, seed=0, max_k=None):
    """Non-certified k-rank estimate from random column subsets (upper bound)."""
    A = _finite_matrix(A)
    n, R = A.shape
    thr, strict = _threshold(A, tau)
    rng = np.random.default_rng(seed)
    kmax = min(n, R) if max_k is None else min(int(max_k), n, R)
    checked = 0
    k_rank = 0
    min_sigma = math.inf
    for k in range(1, kmax + 1):
        subsets = np.array([np.sort(rng.choice(R, size=k, replace=False)) for _ in range(n_samples)])
        sig = _subset_sigma_min(A, subsets)
        checked += len(subsets)
        worst = float(np.min(sig))
        ok = worst > thr if strict else worst >= thr
        if not ok:
            break
        k_rank = k
        min_sigma = worst
    return RobustRankReport(k_rank, math.inf if tau is None else float(tau), "sampled", checked,
                            min_sigma if k_rank else math.nan)


def krank_additive_check(U, V, budget=KRANK_BUDGET):
    """Check ``kr(U (.) V) >= min(kr(U) + kr(V) - 1, R)`` with exact k-ranks.

    The check is literal. The inequality presumes k-ranks of at least one:
    a zero column in ``U`` or ``V`` makes the product column zero, so
    ``kr(U (.) V) = 0`` and the check can return False.
    """
    U = _finite_matrix(U, "U")
    V = _finite_matrix(V, "V")
    if U.shape[1] != V.shape[1]:
        raise PreconditionError("U and V need the same number of columns")
    R = U.shape[1]
    ku = krank_exhaustive(U, budget=budget).k_rank
    kv = krank_exhaustive(V, budget=budget).k_rank
    kuv = krank_exhaustive(khatri_rao(U, V), budget=budget).k_rank
    return kuv >= min(ku + kv - 1, R)


def eigenvalue_separation(d):
    """``min_{i != j} |d_i - d_j|``."""
    d = np.sort(np.asarray(d, dtype=float).ravel())
    if d.size < 2:
        raise PreconditionError("separation needs at least two values")
    return float(np.min(np.diff(d)))


def small_combination(M, t, eta):
    """Coefficients expressing the top-``t`` left singular vectors via columns of ``M``.

    Returns ``alpha`` of shape (t, n) with ``M @ alpha[k] == U[:, k]`` and
    ``||alpha[k]|| = 1/sigma_k <= 1/eta``.
    """
    M = _finite_matrix(M, "M")
    t = int(t)
    if not 1 <= t <= min(M.shape):
        raise PreconditionError(f"t={t} out of range for a {M.shape} matrix")
    U, s, V = svd(M)
    if s[t - 1] < eta:
        raise PreconditionError(f"sigma_{t}(M) = {s[t - 1]:.3g} < eta = {eta:.3g}")
    return (V[:, :t] / s[:t]).T


def _perturbation_setup(U, D, E, F):
    U = _finite_matrix(U, "U")
    n = U.shape[0]
    d = np.diag(D) if np.ndim(D) == 2 else np.asarray(D, dtype=float).ravel()
    E = np.zeros((n, n)) if E is None else _finite_matrix(E, "E")
    F = np.zeros((n, n)) if F is None else _finite_matrix(F, "F")
    if U.shape != (n, n) or d.size != n or E.shape != (n, n) or F.shape != (n, n):
        raise PreconditionError("U, E, F must be n x n and D must have n diagonal entries")
    M = U @ np.diag(d) @ np.linalg.inv(U)
    return U, d, E, F, M


def eig_perturbation_bound(U, D, E=None, F=None, strict=True):
    """Eigenvector deviation bound for ``M(I + E) + F`` with ``M = U D U^{-1}``.

    Returns ``3 (s_max(E) max|D| + s_max(F)) / (s_min(U) sep(D))``. Columns of
    ``U`` are taken as given; the bound is about unit eigenvectors, so pass
    unit-norm columns. ``strict=True`` requires
    ``kappa(U)(||ME|| + ||F||) < sep(D)/(2n)`` (the threshold under which the
    perturbed matrix is provably diagonalizable); ``strict=False`` uses
    ``sep(D)/2``.
    """
    U, d, E, F, M = _perturbation_setup(U, D, E, F)
    n = d.size
    sep = eigenvalue_separation(d)
    s_u = np.linalg.svd(U, compute_uv=False)
    kappa = s_u[0] / s_u[-1]
    lhs = kappa * (np.linalg.norm(M @ E, 2) + np.linalg.norm(F, 2))
    limit = sep / (2 * n) if strict else sep / 2
    if not lhs < limit:
        raise PreconditionError(
            f"perturbation too large for the bound: kappa(U)(||ME||+||F||) = {lhs:.3g} "
            f">= {limit:.3g}"
        )
    num = np.linalg.norm(E, 2) * np.max(np.abs(d)) + np.linalg.norm(F, 2)
    return float(3 * num / (s_u[-1] * sep))


def eigvec_deviation(U, D, E=None, F=None):
    """Measured ``max_i ||u_hat_i - u_i||`` for unit, sign-aligned eigenvectors.

    Eigenvectors of the perturbed matrix are paired with columns of ``U`` by
    nearest eigenvalue (assignment on ``|lambda_hat - d_j|``).
    """
    from scipy.optimize import linear_sum_assignment

    U, d, E, F, M = _perturbation_setup(U, D, E, F)
    Mhat = M @ (np.eye(d.size) + E) + F
    lam, vecs = np.linalg.eig(Mhat)
    rows, cols = linear_sum_assignment(np.abs(lam[:, None] - d[None, :]))
    Un = U / np.linalg.norm(U, axis=0)
    worst = 0.0
    for r, c in zip(rows, cols):
        v = vecs[:, r]
        v = v / np.linalg.norm(v)
        u = Un[:, c]
        phase = np.vdot(v, u)
        if phase != 0:
            v = v * (phase / abs(phase))
        worst = max(worst, float(np.linalg.norm(v - u)))
    return worst
