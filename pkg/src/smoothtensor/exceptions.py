"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`SmoothTensorError`. The CLI maps the two families below onto exit
codes: :class:`AlgorithmicFailure` -> 2, :class:`PreconditionError` -> 3.
"""


class SmoothTensorError(Exception):
    """Base class for all package errors."""


class PreconditionError(SmoothTensorError, ValueError):
    """Input violates a documented precondition."""


class AlgorithmicFailure(SmoothTensorError, RuntimeError):
    """A randomized or iterative procedure did not succeed."""


class RankDeficiencyError(PreconditionError):
    """An unfolding has fewer than ``R`` singular values above the noise floor."""

    def __init__(self, message, spectrum=None):
        super().__init__(message)
        self.spectrum = spectrum


class BudgetExceededError(PreconditionError):
    """Exhaustive enumeration would exceed the configured subset budget."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class IllConditionedError(PreconditionError):
    """A linear system is too badly conditioned to solve reliably."""


class DegenerateTermError(PreconditionError):
    """A recovered term or block has (near) zero mass."""


class ConvergenceError(AlgorithmicFailure):
    """An iterative eigen/SVD routine hit its iteration cap."""


class DefectiveMatrixError(AlgorithmicFailure):
    """Eigenvalues cluster and the eigenvector basis is numerically singular."""

    def __init__(self, message, clustered=None):
        super().__init__(message)
        self.clustered = clustered


class RetryExhaustedError(AlgorithmicFailure):
    """Simultaneous diagonalization failed on every random contraction."""

    def __init__(self, message, sep_observed=None, attempts=None):
        super().__init__(message)
        self.sep_observed = sep_observed
        self.attempts = attempts


class ConstructionFailed(AlgorithmicFailure):
    """The iterative orthogonal-system construction reported FAIL."""

    def __init__(self, message, stage=None, robust_dims=None):
        super().__init__(message)
        self.stage = stage
        self.robust_dims = robust_dims


class MatchingAmbiguityError(AlgorithmicFailure):
    """Cross-run component matching could not single out a partner."""

    def __init__(self, message, collisions=None):
        super().__init__(message)
        self.collisions = collisions


class DegenerateInputWarning(UserWarning):
    """Result computed on degenerate input; interpret with care."""


class SplitResidualWarning(UserWarning):
    """A Khatri-Rao column was not close to rank one when split back."""
