"""Exception hierarchy shared across the package."""


class PdsplitError(Exception):
    """Base class for all package errors."""


class LayoutError(PdsplitError, ValueError):
    """A point does not match the block layout it is used with."""


class MetricIntegrityError(PdsplitError, ValueError):
    """A metric operator failed its symmetry or positive-definiteness certificate."""


class MetricSequenceError(PdsplitError, ValueError):
    """A variable-metric sequence violates its declared ordering condition."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CapabilityError(PdsplitError, NotImplementedError):
    """The requested evaluation has no closed form in the catalog."""


class ConfigError(PdsplitError, ValueError):
    """Algorithm or run parameters violate the admissible ranges."""


class BuildError(PdsplitError, ValueError):
    """A structured object (metric class, split problem) could not be assembled."""
