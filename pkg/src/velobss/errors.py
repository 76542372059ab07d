"""Exception types shared across the package."""


class VelobssError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(VelobssError):
    """Input file is not in a supported encoding."""


class ShapeError(VelobssError):
    """Array arguments have incompatible shapes or lengths."""


class ParseError(VelobssError):
    """A text table could not be parsed.

    Carries the 1-based line number of the offending row.
    """

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InsufficientDataError(VelobssError):
    """Too few samples for the requested operation."""


class DegeneracyError(VelobssError):
    """A matrix or spectrum is singular / degenerate beyond tolerance."""


class DomainError(VelobssError):
    """An argument lies outside the mathematically valid domain."""


class OutOfDomainError(VelobssError):
    """A point lies outside the region where a field is defined.

    Used as a terminator signal by the streamline integrator.
    """


class CoverageError(VelobssError):
    """A coordinate map covers too small a fraction of the data.

    The attained fraction is stored on the exception.
    """

    def __init__(self, fraction, threshold):
        super().__init__(
            f"coordinate map covers {fraction:.1%} of samples,"
            f" below the required {threshold:.0%}"
        )
        self.fraction = fraction
        self.threshold = threshold


class ConstructionFailure(VelobssError):
    """A candidate coordinate map could not be constructed.

    Names the partition whose sweep failed.
    """

    def __init__(self, partition, reason):
        super().__init__(f"partition {partition}: {reason}")
        self.partition = partition
        self.reason = reason


class AlignmentError(VelobssError):
    """No usable local frames; the frame field cannot be oriented."""


class ConfigError(VelobssError):
    """A configuration document is malformed or contains unknown keys."""
