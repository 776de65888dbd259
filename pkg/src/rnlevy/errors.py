"""Exception and warning types shared across the package."""


class RnLevyError(Exception):
    """Base class for all package errors."""


class MalformedInput(RnLevyError):
    """Input stream/file does not conform to the documented schema."""


class PositivityViolation(RnLevyError):
    """A price (or density) is not strictly positive."""


class GridMismatch(RnLevyError):
    """Ensemble paths do not share a common time grid."""


class DegenerateFit(RnLevyError):
    """Trend fit is singular (e.g. a single time point)."""


class InsufficientGrid(RnLevyError):
    """Requested partition level is finer than the data grid."""


class CoverageGap(RnLevyError):
    """Rate curve does not cover the requested interval."""


class MeshTooCoarse(RnLevyError):
    """Finest partition level fails the vanishing-max-term check."""


class IdentityViolation(RnLevyError):
    """A distributional identity of the constructed laws fails its tolerance."""


class ConfigError(RnLevyError):
    """Run configuration is missing required keys or has unknown ones."""


class SinglePathTiltWarning(UserWarning):
    """Tilted expectations replaced by realized sums (single-path mode)."""


class NegativeVarianceWarning(UserWarning):
    """A variance estimate came out negative and was clamped to zero."""
