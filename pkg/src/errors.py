"""
Error types for cityscope

Every domain failure raises a subclass of CityscopeError. The ``code``
attribute is the short case name the CLI prints and the tests match on.
"""


class CityscopeError(Exception):
    """Base class for all domain errors"""

    code = "CityscopeError"

    def __str__(self):
        message = super().__str__()
        return message or self.code


class CityscopeIOError(CityscopeError):
    """A file could not be read or written"""

    code = "IoError"


# Dataset pipeline

class MissingRootError(CityscopeError):
    code = "MissingRoot"


class EmptyDatasetError(CityscopeError):
    code = "EmptyDataset"


class BadRatiosError(CityscopeError):
    code = "BadRatios"


class AlreadySplitError(CityscopeError):
    code = "AlreadySplit"


class DecodeError(CityscopeError):
    code = "DecodeError"


class MissingFileError(CityscopeError):
    code = "MissingFile"


class EmptySplitError(CityscopeError):
    code = "EmptySplit"


class BadManifestError(CityscopeError):
    code = "BadManifest"


# Model zoo

class BadConfigError(CityscopeError):
    code = "BadConfig"


class ShapeUnderflowError(CityscopeError):
    code = "ShapeUnderflow"


class ShapeMismatchError(CityscopeError):
    code = "ShapeMismatch"


class MissingRequiredError(CityscopeError):
    code = "MissingRequired"


class CorruptBundleError(CityscopeError):
    code = "CorruptBundle"


class NonFiniteInputError(CityscopeError):
    code = "NonFiniteInput"


class VersionMismatchError(CityscopeError):
    code = "VersionMismatch"


class CorruptCheckpointError(CityscopeError):
    code = "CorruptCheckpoint"


class CheckpointIOError(CityscopeIOError):
    pass


# Training engine

class NonFiniteGradientError(CityscopeError):
    code = "NonFiniteGradient"


class NonFiniteLossError(CityscopeError):
    code = "NonFiniteLoss"


class BadScopeError(CityscopeError):
    code = "BadScope"


# Evaluation

class LengthMismatchError(CityscopeError):
    code = "LengthMismatch"


class BadIndexError(CityscopeError):
    code = "BadIndex"


class EmptyInputError(CityscopeError):
    code = "EmptyInput"


# Reports and CLI

class EmptyHistoryError(CityscopeError):
    code = "EmptyHistory"


class BadTopKError(CityscopeError):
    code = "BadTopK"


class PlotIOError(CityscopeIOError):
    pass


class ReportIOError(CityscopeIOError):
    pass
