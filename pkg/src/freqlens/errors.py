"""Exception hierarchy shared by all freqlens modules."""


class FreqlensError(Exception):
    """Base class for all errors raised by freqlens."""


class InvalidInputError(FreqlensError):
    """Input array is malformed (non-finite values, wrong dtype, too short)."""


class DimensionError(FreqlensError):
    """Array shapes do not chain or do not match the declared sizes."""


class WindowAdmissibilityError(FreqlensError):
    """Window layout leaves some sample uncovered (sum of windows is zero)."""


class ColaConditionError(FreqlensError):
    """Squared-window overlap sum is not constant, so the unscaled inverse is undefined."""


class StaleSpectrumError(FreqlensError):
    """A caller-supplied spectrum does not match the transform of the signal."""


class SymmetryError(FreqlensError):
    """A map that should be even-symmetric is not; signals an upstream bug."""


class PropagationError(FreqlensError):
    """Relevance propagation hit a zero denominator without a stabilizer."""


class ConfigError(FreqlensError):
    """An attribution or generation config carries out-of-range values."""


class TrainingFailureError(FreqlensError):
    """Training diverged (non-finite loss) or received unusable data."""


class ModelFormatError(FreqlensError):
    """A serialized model file cannot be parsed."""

    def __init__(self, message: str, context: str | None = None):
        super().__init__(message if context is None else f"{message} ({context})")
        self.context = context


class UnsupportedVersionError(ModelFormatError):
    """A serialized artifact declares a format version this code cannot read."""


class DataFormatError(FreqlensError):
    """A dataset or signal file cannot be parsed."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        ctx = []
        if line is not None:
            ctx.append(f"line {line}")
        if field is not None:
            ctx.append(f"field {field!r}")
        super().__init__(message if not ctx else f"{message} ({', '.join(ctx)})")
        self.line = line
        self.field = field


class UnsupportedDomainError(FreqlensError):
    """The requested attribution domain is not defined for this operation."""
