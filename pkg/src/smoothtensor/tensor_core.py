"""Dense tensors, CP factor sets and the multilinear plumbing around them.

Layout is row-major throughout: the last index varies fastest, and the
Khatri-Rao product stores ``U[a, i] * V[b, i]`` at row ``a * V.shape[0] + b``.
Flattening a tensor therefore turns its factor matrices into Khatri-Rao
products of the grouped factors with no extra permutation.
"""
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .exceptions import PreconditionError

__all__ = [
    "DenseTensor",
    "FactorSet",
    "as_array",
    "outer_product",
    "reconstruct",
    "khatri_rao",
    "khatri_rao_many",
    "flatten",
    "contract_to_matrix",
    "multilinear_apply",
    "unfold",
    "write_tensor",
    "read_tensor",
    "write_factors",
    "read_factors",
]


@dataclass(frozen=True)
class DenseTensor:
    """Order-``l`` real tensor stored densely in row-major order.

    Wraps a read-only float64 ndarray. ``data`` is the flat row-major view.
    """

    array: np.ndarray

    def __post_init__(self):
        arr = np.array(self.array, dtype=float, copy=True)
        if arr.ndim < 1:
            raise PreconditionError("tensor order must be >= 1")
        if 0 in arr.shape:
            raise PreconditionError(f"tensor dims must be >= 1, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "array", arr)

    @classmethod
    def from_data(cls, dims, data):
        dims = tuple(int(d) for d in dims)
        data = np.asarray(data, dtype=float).ravel()
        if data.size != int(np.prod(dims)):
            raise PreconditionError(
                f"data length {data.size} does not match prod(dims)={int(np.prod(dims))}"
            )
        return cls(data.reshape(dims))

    @property
    def order(self):
        return self.array.ndim

    @property
    def dims(self):
        return tuple(self.array.shape)

    @property
    def data(self):
        return self.array.ravel()

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.array, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.array, other.array)

    __hash__ = None


def as_array(T):
    """Return the ndarray behind ``T`` (DenseTensor or array-like)."""
    if isinstance(T, DenseTensor):
        return T.array
    arr = np.asarray(T, dtype=float)
    return arr


@dataclass
class FactorSet:
    """Rank-``R`` CP decomposition ``sum_r weights[r] * outer(factors[j][:, r])``.

    Attributes
    ----------
    weights : ndarray of shape (R,)
    factors : list of ndarrays, mode ``j`` of shape (dims[j], R)
    """

    weights: np.ndarray
    factors: list = field(default_factory=list)

    def __post_init__(self):
        self.factors = [np.atleast_2d(np.asarray(f, dtype=float)) for f in self.factors]
        if not self.factors:
            raise PreconditionError("a FactorSet needs at least one factor matrix")
        rank = self.factors[0].shape[1]
        for j, f in enumerate(self.factors):
            if f.ndim != 2 or f.shape[1] != rank:
                raise PreconditionError(
                    f"factor {j} has shape {f.shape}; every factor needs {rank} columns"
                )
        if self.weights is None:
            self.weights = np.ones(rank)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != rank:
            raise PreconditionError(f"expected {rank} weights, got {self.weights.size}")

    @property
    def order(self):
        return len(self.factors)

    @property
    def rank(self):
        return self.factors[0].shape[1]

    @property
    def dims(self):
        return tuple(f.shape[0] for f in self.factors)

    def term(self, r):
        """Dense array of the ``r``-th weighted rank-one term."""
        return self.weights[r] * outer_product([f[:, r] for f in self.factors]).array

    def terms_matrix(self):
        """Rank-one terms flattened row-major, shape (R, prod(dims))."""
        kr = khatri_rao_many(self.factors)
        return (kr * self.weights).T

    def canonical(self):
        """Unit-norm columns, weights carry scale, sign fixed by mode 0.

        The first nonzero entry of each mode-0 column is made positive; every
        other mode is made to have a positive entry of largest magnitude, with
        the sign compensated in the weight. Zero columns leave the weight at 0.
        """
        weights = self.weights.copy()
        factors = []
        for f in self.factors:
            norms = np.linalg.norm(f, axis=0)
            safe = np.where(norms > 0, norms, 1.0)
            factors.append(f / safe)
            weights = weights * norms
        for j, f in enumerate(factors):
            for r in range(f.shape[1]):
                col = f[:, r]
                if j == 0:
                    # round-off sized entries must not decide the sign
                    nz = np.flatnonzero(np.abs(col) > 1e-10 * np.max(np.abs(col), initial=0.0))
                    pivot = col[nz[0]] if nz.size else 1.0
                else:
                    pivot = col[np.argmax(np.abs(col))]
                if pivot < 0:
                    f[:, r] = -col
                    weights[r] = -weights[r]
        return FactorSet(weights, factors)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return FactorSet(self.weights[perm], [f[:, perm] for f in self.factors])

    def to_tensor(self):
        return reconstruct(self)


def outer_product(vectors):
    """Outer product of ``l`` vectors as an order-``l`` DenseTensor.

    >>> outer_product([[1, 0], [0, 1]]).array.tolist()
    [[0.0, 1.0], [0.0, 0.0]]
    """
    vectors = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if not vectors:
        raise PreconditionError("outer_product needs at least one vector")
    if any(v.size == 0 for v in vectors):
        raise PreconditionError("outer_product vectors must be nonempty")
    return DenseTensor(reduce(np.multiply.outer, vectors))


def reconstruct(fs):
    """Dense tensor of a FactorSet."""
    if not isinstance(fs, FactorSet):
        raise PreconditionError("reconstruct expects a FactorSet")
    flat = khatri_rao_many(fs.factors) @ fs.weights
    return DenseTensor(flat.reshape(fs.dims))


def khatri_rao(U, V):
    """Column-wise Kronecker product; column ``i`` is ``vec(u_i (x) v_i)``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if U.shape[1] != V.shape[1]:
        raise PreconditionError(
            f"Khatri-Rao needs equal column counts, got {U.shape[1]} and {V.shape[1]}"
        )
    return (U[:, None, :] * V[None, :, :]).reshape(U.shape[0] * V.shape[0], U.shape[1])


def khatri_rao_many(matrices):
    """Left-to-right Khatri-Rao product of a list of matrices."""
    matrices = list(matrices)
    if not matrices:
        raise PreconditionError("need at least one matrix")
    return reduce(khatri_rao, matrices[1:], np.atleast_2d(np.asarray(matrices[0], dtype=float)))


def _check_partition(mode_groups, order):
    groups = [tuple(int(m) for m in g) for g in mode_groups]
    if any(len(g) == 0 for g in groups):
        raise PreconditionError("mode groups must be nonempty")
    flat = [m for g in groups for m in g]
    if sorted(flat) != list(range(order)):
        raise PreconditionError(
            f"mode groups {groups} are not a partition of modes 0..{order - 1}"
        )
    return groups


def flatten(T, mode_groups):
    """Regroup the modes of ``T`` into ``len(mode_groups)`` axes.

    ``mode_groups`` is a partition of ``range(T.order)`` (0-based); the order
    of modes inside a group is kept, so the factors of the result are the
    Khatri-Rao products of the grouped factors, in that order.
    """
    arr = as_array(T)
    groups = _check_partition(mode_groups, arr.ndim)
    perm = [m for g in groups for m in g]
    shape = [int(np.prod([arr.shape[m] for m in g])) for g in groups]
    return DenseTensor(np.transpose(arr, perm).reshape(shape))


def flatten_factors(fs, mode_groups):
    """FactorSet of ``flatten(reconstruct(fs), mode_groups)`` without densifying."""
    groups = _check_partition(mode_groups, fs.order)
    return FactorSet(fs.weights, [khatri_rao_many([fs.factors[m] for m in g]) for g in groups])


def unfold(T, mode):
    """Mode-``mode`` unfolding: shape (dims[mode], prod(other dims))."""
    arr = as_array(T)
    return np.moveaxis(arr, mode, 0).reshape(arr.shape[mode], -1)


def contract_to_matrix(T, a):
    """``T(., ., a)``: contract the third mode of an order-3 tensor with ``a``."""
    arr = as_array(T)
    a = np.asarray(a, dtype=float).ravel()
    if arr.ndim != 3:
        raise PreconditionError(f"contract_to_matrix needs an order-3 tensor, got order {arr.ndim}")
    if a.size != arr.shape[2]:
        raise PreconditionError(f"vector length {a.size} != mode-3 dimension {arr.shape[2]}")
    return arr @ a


def multilinear_apply(T, vectors, modes=None):
    """Contract ``T`` with one vector per mode in ``modes``.

    With ``modes=None`` every mode is contracted and a float is returned.
    Otherwise ``vectors[k]`` is contracted against mode ``modes[k]`` and the
    remaining modes form the returned DenseTensor (a float if none remain).
    """
    arr = as_array(T)
    if modes is None:
        modes = list(range(arr.ndim))
    modes = [int(m) for m in modes]
    vectors = [np.asarray(v, dtype=float).ravel() for v in vectors]
    if len(vectors) != len(modes) or len(set(modes)) != len(modes):
        raise PreconditionError("need exactly one vector per distinct mode")
    for m, v in zip(modes, vectors):
        if not 0 <= m < arr.ndim:
            raise PreconditionError(f"mode {m} out of range for order {arr.ndim}")
        if v.size != arr.shape[m]:
            raise PreconditionError(f"vector for mode {m} has length {v.size}, expected {arr.shape[m]}")
    # contract highest modes first so lower mode indices stay valid
    out = arr
    for m, v in sorted(zip(modes, vectors), key=lambda mv: -mv[0]):
        out = np.tensordot(out, v, axes=([m], [0]))
    if np.ndim(out) == 0:
        return float(out)
    return DenseTensor(out)


# --------------------------------------------------------------------------
# text formats


def _fmt(x):
    return "%.17g" % x


def write_tensor(path_or_file, T):
    """Write ``order d1 .. dl`` then row-major values, one row of the last mode per line."""
    arr = as_array(T)
    lines = [" ".join([str(arr.ndim)] + [str(d) for d in arr.shape])]
    rows = arr.reshape(-1, arr.shape[-1])
    lines.extend(" ".join(_fmt(x) for x in row) for row in rows)
    _write_lines(path_or_file, lines)


def _tokens(path_or_file):
    if hasattr(path_or_file, "read"):
        text = path_or_file.read()
    else:
        with open(path_or_file) as fh:
            text = fh.read()
    out = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        out.extend(line.split())
    return out


def _write_lines(path_or_file, lines):
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_file, "write"):
        path_or_file.write(text)
    else:
        with open(path_or_file, "w") as fh:
            fh.write(text)


def read_tensor(path_or_file):
    tok = _tokens(path_or_file)
    if not tok:
        raise PreconditionError("empty tensor file")
    order = int(tok[0])
    dims = [int(t) for t in tok[1:1 + order]]
    values = np.array([float(t) for t in tok[1 + order:]])
    return DenseTensor.from_data(dims, values)


def write_factors(path_or_file, fs):
    """Write ``order rank``, then per mode ``d_j`` and a d_j x R block, then the weights."""
    lines = [f"{fs.order} {fs.rank}"]
    for f in fs.factors:
        lines.append(str(f.shape[0]))
        lines.extend(" ".join(_fmt(x) for x in row) for row in f)
    lines.append(" ".join(_fmt(x) for x in fs.weights))
    _write_lines(path_or_file, lines)


def read_factors(path_or_file):
    tok = _tokens(path_or_file)
    pos = 0
    order, rank = int(tok[0]), int(tok[1])
    pos = 2
    factors = []
    for _ in range(order):
        d = int(tok[pos])
        pos += 1
        vals = np.array([float(t) for t in tok[pos:pos + d * rank]])
        if vals.size != d * rank:
            raise PreconditionError("truncated factor matrix")
        factors.append(vals.reshape(d, rank))
        pos += d * rank
    weights = np.array([float(t) for t in tok[pos:pos + rank]])
    if weights.size != rank:
        raise PreconditionError("truncated weight vector")
    return FactorSet(weights, factors)
