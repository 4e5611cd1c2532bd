"""Exception types shared across the package."""


class QbdError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(QbdError):
    """Operands have incompatible shapes."""


class ParamMismatchError(QbdError):
    """Derivative bundles carry different parameter lists."""


class SingularMatrixError(QbdError):
    """A linear solve hit a pivot below the singularity threshold."""


class InvalidRateError(QbdError):
    """A builder received a non-positive rate."""


class InvalidSubgeneratorError(QbdError):
    """The phase-process generator passed to a builder is not a generator."""


class InvalidPerturbationError(QbdError):
    """A perturbed generator left the admissible region."""


class NoConvergenceError(QbdError):
    """An iterative search hit its cap before meeting its tolerance."""


class SingularSystemError(QbdError):
    """A reference computation found more than one null direction."""


class InversionError(QbdError):
    """Numerical transform inversion produced an inadmissible result."""


class ModelParseError(QbdError):
    """A model file could not be interpreted against the schema."""


class ModelValidationError(QbdError):
    """A structurally well-formed model violates generator invariants.

    Carries the full diagnostics list produced by ``validate``.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
