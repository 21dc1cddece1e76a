"""Exception hierarchy shared across the package.

Config/usage errors map to CLI exit code 1, everything else to 2.
"""


class MscpError(Exception):
    """Base class for all package errors."""


class InvalidConfig(MscpError):
    """A configuration value is missing, malformed, or out of range."""


class UsageError(MscpError):
    """Bad command-line invocation."""


class InvalidAlpha(MscpError):
    """A miscoverage level lies outside (0, 1) or a grid of them is malformed."""


class EmptyCalibration(MscpError):
    """Calibration data is empty."""


class EmptyTraining(MscpError):
    """Training data is empty."""


class EmptyEvaluation(MscpError):
    """An evaluation input (test points, coverage flags) is empty."""


class IncompatibleSets(MscpError):
    """Prediction sets over different label spaces cannot be combined."""


class InfeasibleAllocation(MscpError):
    """No allocation within the size-curve grid ranges sums to the budget."""


class ShapeError(MscpError):
    """An array dimension does not match the model."""


class InvalidDistribution(MscpError):
    """A probability vector has negative mass or does not sum to one."""


class ParseError(MscpError):
    """A data file is malformed; the message carries the line number."""


# Errors that indicate a bad config or invocation rather than a runtime failure.
CONFIG_ERRORS = (InvalidConfig, UsageError, InvalidAlpha)
