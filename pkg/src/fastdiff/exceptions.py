"""Error hierarchy for the fastdiff laboratory."""


class FastDiffError(Exception):
    """Base class for every error raised by fastdiff."""


class ConfigurationError(FastDiffError, ValueError):
    """A parameter or precondition is violated."""


class GridMismatchError(ConfigurationError):
    """Fields do not live on the same grid."""


class AdmissibilityError(FastDiffError, ValueError):
    """A field leaves the admissible range (1 + h <= 0, negative weight, ...)."""


class UndefinedRatioError(FastDiffError):
    """A ratio was requested whose denominator or numerator vanishes."""


class BracketingError(FastDiffError):
    """No sign change of the shooting residual was found."""


class ConvergenceError(FastDiffError):
    """An iterative solver did not converge."""

    def __init__(
        self,
        message: str,
        *,
        iterations: int | None = None,
        contraction_factor: float | None = None,
    ) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.contraction_factor = contraction_factor


class DegenerateGapError(FastDiffError):
    """The spectral cut falls inside a (numerically) multiple eigenvalue."""

    def __init__(self, message: str, *, multiplicity: int) -> None:
        super().__init__(message)
        self.multiplicity = multiplicity


class BlowUpError(FastDiffError):
    """A trajectory exceeded the blow-up threshold."""

    def __init__(self, message: str, *, time: float) -> None:
        super().__init__(message)
        self.time = time


class NonContractionError(FastDiffError):
    """A map expected to contract has measured Lipschitz constant >= 1."""

    def __init__(self, message: str, *, factor: float) -> None:
        super().__init__(message)
        self.factor = factor


class SmallnessError(FastDiffError):
    """A trajectory never enters the small-data regime required downstream."""
