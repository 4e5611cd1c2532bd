"""Solvers for level-dependent quasi-birth-and-death processes.

The package computes stationary distributions, first-passage transforms
and expected taboo times, and transient distributions of finite (or
truncated) level-dependent QBDs, together with exact parameter
sensitivities of each quantity, and ships dense brute-force reference
implementations for cross-checking every result.
"""

from .errors import (
    DimensionMismatchError,
    InvalidPerturbationError,
    InvalidRateError,
    InvalidSubgeneratorError,
    InversionError,
    ModelParseError,
    ModelValidationError,
    NoConvergenceError,
    ParamMismatchError,
    QbdError,
    SingularMatrixError,
    SingularSystemError,
)
from .linalg import (
    DerivBundle,
    bundle_add,
    bundle_const,
    bundle_inv,
    bundle_mul,
    inf_norm_diff,
    lu_solve,
)
from .model import (
    BlockSet,
    LevelVector,
    LevelVectorBundle,
    ParamQbdModel,
    QbdModel,
    assemble_full_generator,
    build_mmpp_queue,
    build_perturbed,
    build_two_class,
    validate,
)
from .modelio import load_model, save_model
from .passage import (
    PassageResult,
    TabooSet,
    g_step_family,
    h_step_family,
    passage_moment1,
    passage_sensitivity,
    passage_transform,
)
from .stationary import (
    RhatFamily,
    TruncationResult,
    find_truncation_level,
    rhat_family,
    stationary_distribution,
    stationary_sensitivity,
)
from .transient import (
    InversionConfig,
    TransientQuery,
    invert_transform,
    rtilde_family,
    transient_distribution,
    transient_sensitivity,
    transient_transform,
)

__version__ = "0.1.0"

__all__ = [
    "BlockSet",
    "DerivBundle",
    "DimensionMismatchError",
    "InvalidPerturbationError",
    "InvalidRateError",
    "InvalidSubgeneratorError",
    "InversionConfig",
    "InversionError",
    "LevelVector",
    "LevelVectorBundle",
    "ModelParseError",
    "ModelValidationError",
    "NoConvergenceError",
    "ParamMismatchError",
    "ParamQbdModel",
    "PassageResult",
    "QbdError",
    "QbdModel",
    "RhatFamily",
    "SingularMatrixError",
    "SingularSystemError",
    "TabooSet",
    "TransientQuery",
    "TruncationResult",
    "assemble_full_generator",
    "build_mmpp_queue",
    "build_perturbed",
    "build_two_class",
    "bundle_add",
    "bundle_const",
    "bundle_inv",
    "bundle_mul",
    "find_truncation_level",
    "g_step_family",
    "h_step_family",
    "inf_norm_diff",
    "invert_transform",
    "load_model",
    "lu_solve",
    "passage_moment1",
    "passage_sensitivity",
    "passage_transform",
    "rhat_family",
    "rtilde_family",
    "save_model",
    "stationary_distribution",
    "stationary_sensitivity",
    "transient_distribution",
    "transient_sensitivity",
    "transient_transform",
    "validate",
]
