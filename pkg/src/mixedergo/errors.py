"""Exception types shared across the package.

Every failure mode that is part of a documented contract gets its own
class so callers can branch on it; generic misuse raises the usual
builtins (ValueError, TypeError).
"""


class MixedErgoError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(MixedErgoError):
    """Array shapes are inconsistent with the model layout."""


class NonFinite(MixedErgoError):
    """An input or intermediate value is NaN or infinite."""


class RankDeficientX(MixedErgoError):
    """The fixed-effects design has numerical rank below its column count."""


class SingularQ(MixedErgoError):
    """The precision matrix of the random-effects conditional could not be
    factorized; with strictly positive, finite variances this indicates
    corrupted input."""


class InvalidShape(MixedErgoError):
    """An inverted-gamma shape or scale parameter is not strictly positive."""


class DomainError(MixedErgoError):
    """A scalar argument lies outside the mathematically valid domain."""


class CertificateUnavailable(MixedErgoError):
    """The drift-certificate construction fails at the supplied (s, c)."""


class TooFewSamples(MixedErgoError):
    """Not enough retained draws for the requested batch layout."""


class GridTooCoarse(MixedErgoError):
    """Quadrature grid leaves more than the allowed mass on its boundary."""

    def __init__(self, message, boundary_fraction=None, log_mass=None):
        super().__init__(message)
        self.boundary_fraction = boundary_fraction
        self.log_mass = log_mass


class ValidationFailed(MixedErgoError):
    """Model validation (well-definedness of the sampler) failed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
