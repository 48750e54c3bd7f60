"""Exception types shared across the package."""


class PoisprojError(Exception):
    """Base class for all package errors."""


class DuplicateField(PoisprojError):
    pass


class MissingParity(PoisprojError):
    pass


class UnknownField(PoisprojError):
    pass


class UnsupportedFragment(PoisprojError):
    """The expression left the decidable fragment of the rewrite engine."""


class NotAFunctional(PoisprojError):
    pass


class IncompatibleLevels(PoisprojError):
    pass


class NLimitExceeded(PoisprojError):
    """Particle-sum expansion requested beyond the expression-size budget."""


class LevelMismatch(PoisprojError):
    pass


class NonlinearBracket(PoisprojError):
    """Bracket coefficients are not affine in the fields; symbolic Jacobi
    verification does not apply and the numeric residual check should be used."""


class IndefiniteParity(PoisprojError):
    pass


class UnknownId(PoisprojError):
    pass


class BadParams(PoisprojError):
    pass


class DegreeLimit(PoisprojError):
    pass


class TernaryInteraction(PoisprojError):
    """Energy split over pair densities requires three-particle interactions."""


class GridMismatch(PoisprojError):
    pass


class ShapeMismatch(PoisprojError):
    pass


class ProjectionsDiffer(PoisprojError):
    pass


class BlowUp(PoisprojError):
    """Trajectory produced NaN or overflow; carries the partial trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class ModelSyntaxError(PoisprojError):
    """Positioned diagnostic from the model-file parser."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = f"{line}:{column}: " if line is not None else ""
        super().__init__(f"{loc}{message}")


class ResolutionError(ModelSyntaxError):
    pass
