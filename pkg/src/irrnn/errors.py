"""Exception hierarchy shared by all modules."""


class IRRNNError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(IRRNNError, ValueError):
    pass


class FormatError(IRRNNError):
    """A dataset, fit, or net directory could not be parsed.

    ``field`` names the manifest key or array file that was at fault.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class RankDeficiencyError(IRRNNError, ValueError):
    pass


class TrainingDivergedError(IRRNNError, FloatingPointError):
    def __init__(self, step, message="non-finite loss or gradient"):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step


class UndefinedMetricError(IRRNNError, ValueError):
    pass
