"""Overcomplete tensor decomposition, smoothed-conditioning experiments and
moment-based mixture learning.

The functional API lives in the submodules (:mod:`.tensor_core`,
:mod:`.linalg`, :mod:`.decompose`, :mod:`.smoothed_lab`, :mod:`.multiview`,
:mod:`.gaussians`); :mod:`.estimators` wraps the learners in scikit-learn
style classes.
"""
__version__ = "0.1.0"

from .decompose import (  # noqa: E402
    ConditionReport,
    DecomposeConfig,
    decompose,
    decompose_full_rank,
    decompose_overcomplete,
    recovery_error,
    refine_als,
)
from .estimators import AxisAlignedGaussianMixture, MultiViewMixture, TensorDecomposition  # noqa: E402
from .exceptions import *  # noqa: E402,F401,F403
from .tensor_core import DenseTensor, FactorSet, reconstruct  # noqa: E402

__all__ = [
    "__version__",
    "AxisAlignedGaussianMixture",
    "ConditionReport",
    "DecomposeConfig",
    "DenseTensor",
    "FactorSet",
    "MultiViewMixture",
    "TensorDecomposition",
    "decompose",
    "decompose_full_rank",
    "decompose_overcomplete",
    "reconstruct",
    "recovery_error",
    "refine_als",
]
