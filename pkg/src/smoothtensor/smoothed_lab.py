"""Smoothed-analysis experiments on Khatri-Rao products and orthogonal systems.

Vectors in ``R^{n*m}`` are read as ``n x m`` matrices stored column after
column: coordinate ``a + n*i`` holds entry ``(a, i)``, so column ``i`` is the
contiguous block ``[n*i, n*(i+1))``.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_rng
from .exceptions import ConstructionFailed, PreconditionError
from .linalg import small_combination
from .tensor_core import khatri_rao_many

__all__ = [
    "PerturbationModel",
    "SweepResult",
    "OrthogonalSystem",
    "perturb",
    "base_matrix",
    "kr_sigma_min_sweep",
    "projection_experiment",
    "robust_column_dimensions",
    "build_orthogonal_system",
    "verify_orthogonal_system",
    "q_matrix_experiment",
    "random_subspace",
    "loglog_slope",
]

BASE_FAMILIES = ("zero", "unit", "rank1")
QUANTILES = (0.0, 0.01, 0.1, 0.5, 0.9, 1.0)


@dataclass(frozen=True)
class PerturbationModel:
    """Additive N(0, rho^2/n) noise on each coordinate of an n-vector."""

    rho: float
    dimension: int

    def __post_init__(self):
        if not self.rho > 0:
            raise PreconditionError(f"rho must be positive, got {self.rho}")
        if self.dimension < 1:
            raise PreconditionError("dimension must be >= 1")

    @property
    def std(self):
        return self.rho / math.sqrt(self.dimension)


def perturb(columns, pm, seed):
    """Return ``columns + G`` with an independent Gaussian stream per column."""
    X = np.asarray(columns, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, R = X.shape
    if pm.dimension != n:
        raise PreconditionError(f"perturbation model is for n={pm.dimension}, columns have n={n}")
    noise = np.column_stack([derive_rng(seed, "perturb", c).standard_normal(n) for c in range(R)])
    return X + pm.std * noise


def base_matrix(family, n, R, rng):
    """Unperturbed ``n x R`` base: zeros, i.i.d. unit columns, or one repeated unit column."""
    if family == "zero":
        return np.zeros((n, R))
    if family == "unit":
        A = rng.standard_normal((n, R))
        return A / np.linalg.norm(A, axis=0)
    if family == "rank1":
        u = rng.standard_normal(n)
        return np.tile((u / np.linalg.norm(u))[:, None], (1, R))
    raise PreconditionError(f"unknown base family {family!r}; choose from {BASE_FAMILIES}")


@dataclass
class SweepResult:
    n: int
    R: int
    ell: int
    rho: float
    base: str
    trials: int
    sigma_min: list = field(default_factory=list)
    quantiles: dict = field(default_factory=dict)
    failures: int = 0
    wall_ms: list = field(default_factory=list)
    skipped: str = ""

    @property
    def median(self):
        return float(np.median(self.sigma_min)) if self.sigma_min else math.nan


def _kr_trial(n, R, ell, rho, base, seed, grid_index, trial):
    t0 = time.perf_counter()
    rng = derive_rng(seed, "kr-sweep", grid_index, trial)
    pm = PerturbationModel(rho, n)
    mats = []
    for j in range(ell):
        B = base_matrix(base, n, R, rng)
        mats.append(perturb(B, pm, int(rng.integers(2**63))))
    A = khatri_rao_many(mats)
    smin = float(np.linalg.svd(A, compute_uv=False)[-1])
    return smin, (time.perf_counter() - t0) * 1e3


def kr_sigma_min_sweep(n_list, r_list, ell_list, rho_list, trials, seed, base="zero",
                       fail_threshold=0.0, n_jobs=1):
    """Smallest singular value of perturbed ``l``-wise Khatri-Rao products.

    One SweepResult per grid point ``(n, R, l, rho)``, in grid order. Each trial
    uses its own stream derived from ``(seed, grid index, trial)``, so the
    samples do not depend on ``n_jobs`` or execution order. Grid points with
    ``R > n**l`` are returned with ``skipped`` set and no samples.
    """
    grid = [(n, R, ell, rho) for n in n_list for R in r_list for ell in ell_list for rho in rho_list]
    results = []
    jobs = []
    for gi, (n, R, ell, rho) in enumerate(grid):
        res = SweepResult(int(n), int(R), int(ell), float(rho), base, int(trials))
        results.append(res)
        if R > n**ell:
            res.skipped = f"R={R} exceeds flattened dimension n^l={n**ell}"
            res.trials = 0
            continue
        jobs.extend((gi, t) for t in range(trials))

    def run(job):
        gi, t = job
        n, R, ell, rho = grid[gi]
        return job, _kr_trial(int(n), int(R), int(ell), float(rho), base, seed, gi, t)

    if n_jobs == 1:
        outputs = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outputs = list(pool.map(run, jobs))
    outputs.sort(key=lambda o: o[0])
    for (gi, _), (smin, ms) in outputs:
        results[gi].sigma_min.append(smin)
        results[gi].wall_ms.append(ms)
    for res in results:
        if res.sigma_min:
            s = np.asarray(res.sigma_min)
            res.quantiles = {q: float(np.quantile(s, q)) for q in QUANTILES}
            res.failures = int(np.sum(s <= fail_threshold))
    return results


def _orthonormal_basis(V, tol=1e-12):
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    keep = s > tol * (s[0] if s.size else 0.0)
    return U[:, keep]


def random_subspace(ambient, dim, rng):
    """Orthonormal basis (ambient x dim) of a uniformly random subspace."""
    Q, _ = np.linalg.qr(rng.standard_normal((ambient, dim)))
    return Q


def projection_experiment(V_basis, pm, trials, seed, ell=2, base_vectors=None, bins=20):
    """Distribution of ``||Proj_V(x~1 (x) ... (x) x~l)||`` over perturbations.

    ``V_basis`` has ``n**ell`` rows; it is orthonormalized internally. Base
    vectors default to zero. Returns a dict with the samples, summary
    quantiles, a histogram of ``log10`` norms and ``rho^l n^(-3^l)`` (the
    shape of the theoretical lower bound) for comparison.
    """
    n = pm.dimension
    B = _orthonormal_basis(V_basis)
    if B.shape[0] != n**ell:
        raise PreconditionError(f"subspace lives in {B.shape[0]} coordinates, expected n^l = {n**ell}")
    if base_vectors is None:
        base_vectors = [np.zeros(n)] * ell
    base_vectors = [np.asarray(x, dtype=float).ravel() for x in base_vectors]
    if len(base_vectors) != ell or any(x.size != n for x in base_vectors):
        raise PreconditionError(f"need {ell} base vectors of length {n}")
    norms = np.empty(trials)
    for t in range(trials):
        rng = derive_rng(seed, "projection", t)
        xs = [x + pm.std * rng.standard_normal(n) for x in base_vectors]
        prod = xs[0]
        for x in xs[1:]:
            prod = np.multiply.outer(prod, x).ravel()
        norms[t] = np.linalg.norm(B.T @ prod)
    logs = np.log10(np.maximum(norms, 1e-300))
    hist, edges = np.histogram(logs, bins=bins)
    return {
        "norms": norms,
        "min": float(norms.min()),
        "quantiles": {q: float(np.quantile(norms, q)) for q in QUANTILES},
        "bound_shape": pm.rho**ell * float(n) ** (-(3**ell)),
        "histogram": (hist, edges),
    }


def robust_column_dimensions(V_basis, p1, p2, threshold=None):
    """Per-column robust dimension of a subspace of ``R^{p1*p2}``.

    Column ``i`` is the row block ``[p1*i, p1*(i+1))`` of the basis matrix;
    ``d_i`` counts singular values of that block that are at least
    ``1/sqrt(p2)`` (or ``threshold``).
    """
    B = np.asarray(V_basis, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != p1 * p2:
        raise PreconditionError(f"basis has {B.shape[0]} rows, expected p1*p2 = {p1 * p2}")
    thr = 1.0 / math.sqrt(p2) if threshold is None else threshold
    dims = []
    for i in range(p2):
        block = B[p1 * i:p1 * (i + 1)]
        s = np.linalg.svd(block, compute_uv=False)
        # exact ties with the threshold count (full space has sigma == 1 >= 1/sqrt(1))
        dims.append(int(np.sum(s >= thr * (1 - 1e-12))))
    return dims


@dataclass
class OrthogonalSystem:
    """Matrices ``M_1..M_r`` (array of shape (r, n, m), unit Frobenius norm).

    ``column_order`` lists the ``s`` columns in the order they were fixed;
    ``delta_prime = s / m``.
    """

    matrices: np.ndarray
    column_order: list
    theta: float
    delta_prime: float
    stage_robust_dims: list = field(default_factory=list)

    @property
    def r(self):
        return self.matrices.shape[0]

    @property
    def n(self):
        return self.matrices.shape[1]

    @property
    def m(self):
        return self.matrices.shape[2]

    def vec(self, j):
        """Column-stacked vector of ``M_j`` (coordinate ``a + n*i``)."""
        return self.matrices[j].reshape(-1, order="F")


def _null_space(A, tol=1e-10):
    """Orthonormal basis of ``{x : A x = 0}``."""
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > tol * max(s[0] if s.size else 0.0, 1.0)))
    return Vt[rank:].T


def build_orthogonal_system(V_basis, n, m, r, s, seed=0):
    """Iteratively construct an ordered orthogonal system inside a subspace.

    ``V_basis`` spans a ``delta * n * m`` dimensional subspace of ``R^{n*m}``.
    Stage ``t`` restricts the subspace to matrices vanishing on the columns
    fixed so far, picks the free column of largest robust dimension (ties by
    lowest index; at least ``delta*n/2`` required), and adds to each ``M_j`` a
    minimum-norm ``Z_j`` from the restriction whose chosen column is one of
    ``r`` orthonormal directions. Those directions are orthogonal to every
    previously fixed column and to what the chosen column of each ``M_j``
    already holds from earlier stages, so every fixed column keeps a residual
    of at least 1 against the others before the final normalization.

    Raises
    ------
    ConstructionFailed
        No column reaches the robust-dimension threshold, or the
        orthogonality constraints leave fewer than ``r`` free directions.
    """
    B = _orthonormal_basis(V_basis)
    N = n * m
    if B.shape[0] != N:
        raise PreconditionError(f"basis has {B.shape[0]} rows, expected n*m = {N}")
    if r < 1 or s < 1 or s > m:
        raise PreconditionError("need r >= 1 and 1 <= s <= m")
    rng = derive_rng(seed, "orthosys")
    delta = B.shape[1] / N
    need = delta * n / 2
    thr = 1.0 / math.sqrt(m)

    M = np.zeros((r, n, m))
    fixed = []
    stage_dims = []
    for t in range(s):
        # basis of {x in V : x vanishes on fixed columns}
        if fixed:
            rows = np.concatenate([np.arange(n * i, n * (i + 1)) for i in fixed])
            W = B @ _null_space(B[rows])
        else:
            W = B
        free = [i for i in range(m) if i not in fixed]
        if W.shape[1] == 0:
            raise ConstructionFailed(f"stage {t + 1}: restricted subspace is empty", stage=1, robust_dims=[])
        svds = {}
        dims = {}
        for i in free:
            Ui, si, Vi = np.linalg.svd(W[n * i:n * (i + 1)], full_matrices=False)
            svds[i] = (Ui, si, Vi.T)
            dims[i] = int(np.sum(si >= thr))
        stage_dims.append(dict(dims))
        best = max(free, key=lambda i: (dims[i], -i))
        if dims[best] < need:
            raise ConstructionFailed(
                f"stage {t + 1}, step 1: no free column has robust dimension >= {need:.3g}; "
                f"observed {dims}",
                stage=1,
                robust_dims=dims,
            )
        i = best
        Ui, si, Vi = svds[i]
        d = dims[i]
        Q = Ui[:, :d]

        constraints = [M[k][:, j] for j in fixed for k in range(r)]
        constraints += [M[k][:, i] for k in range(r) if np.linalg.norm(M[k][:, i]) > 0]
        if constraints:
            C = _orthonormal_basis(np.column_stack(constraints))
            beta = _null_space(C.T @ Q)
        else:
            beta = np.eye(d)
        if beta.shape[1] < r:
            raise ConstructionFailed(
                f"stage {t + 1}, step 2: only {beta.shape[1]} directions orthogonal to "
                f"{len(constraints)} constraints, need r = {r}",
                stage=2,
                robust_dims=dims,
            )
        # random orthonormal r-frame inside the admissible directions
        G, _ = np.linalg.qr(rng.standard_normal((beta.shape[1], r)))
        E = Q @ (beta @ G)  # n x r, orthonormal, in the robust span
        alpha = small_combination(W[n * i:n * (i + 1)], d, thr)  # d x dim(W)
        for j in range(r):
            coeff = Q.T @ E[:, j]  # E_j = Q coeff
            Z = W @ (alpha.T @ coeff)
            M[j] += Z.reshape(m, n).T
        fixed.append(i)

    M /= np.linalg.norm(M, axis=(1, 2))[:, None, None]
    theta = 1.0 / math.sqrt(n * m**3)
    return OrthogonalSystem(M, fixed, theta, s / m, stage_dims)


def _residual(vec, others):
    if not others:
        return float(np.linalg.norm(vec))
    A = np.column_stack(others)
    coef, *_ = np.linalg.lstsq(A, vec, rcond=None)
    return float(np.linalg.norm(vec - A @ coef))


def verify_orthogonal_system(sys):
    """Check ordered theta-orthogonality; returns ``(ok, worst_residual)``.

    For the ``t``-th ordered column and each ``j``, the column of ``M_j`` is
    projected off the span of all ordered columns ``1..t`` of all matrices,
    except itself.
    """
    M = sys.matrices
    r = M.shape[0]
    worst = math.inf
    for t, i in enumerate(sys.column_order):
        prev = [M[k][:, c] for c in sys.column_order[:t] for k in range(r)]
        for j in range(r):
            others = prev + [M[k][:, i] for k in range(r) if k != j]
            worst = min(worst, _residual(M[j][:, i], others))
    if worst is math.inf:
        worst = 0.0 if not sys.column_order else worst
    return bool(worst >= sys.theta), float(worst)


def q_matrix_experiment(sys, pm, trials, seed, base=None):
    """Distribution of ``sigma_{ceil(r/2)}(Q(x~))`` with rows ``x~^T M_j``.

    Base vector defaults to zero. Returns the samples, the reference
    ``rho * theta / n**4`` and the fraction of trials below it.
    """
    n = sys.n
    if pm.dimension != n:
        raise PreconditionError("perturbation dimension must match matrix row count")
    x0 = np.zeros(n) if base is None else np.asarray(base, dtype=float).ravel()
    k = math.ceil(sys.r / 2)
    vals = np.empty(trials)
    for t in range(trials):
        x = x0 + pm.std * derive_rng(seed, "qmatrix", t).standard_normal(n)
        Q = np.einsum("a,jam->jm", x, sys.matrices)
        vals[t] = np.linalg.svd(Q, compute_uv=False)[k - 1]
    ref = pm.rho * sys.theta / n**4
    return {
        "sigma": vals,
        "reference": ref,
        "fraction_below": float(np.mean(vals < ref)),
        "median": float(np.median(vals)),
    }


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
