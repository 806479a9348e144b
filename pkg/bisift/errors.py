"""Exception hierarchy for the BiSIFT retrieval library."""


class BisiftError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(BisiftError, ValueError):
    """A descriptor, patch or matrix has the wrong shape."""


class FormatError(BisiftError, ValueError):
    """A file does not follow the declared on-disk format."""


class CorruptionError(BisiftError, ValueError):
    """A file is structurally valid but its payload is truncated or damaged."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class SchemeError(BisiftError, ValueError):
    """Two operands use incompatible representations or binarization schemes."""


class EmptyDatabaseError(BisiftError, ValueError):
    """A nearest-neighbor search was asked to scan an empty database."""


class InsufficientDataError(BisiftError, ValueError):
    """Not enough samples to train the requested vocabulary."""


class VocabularyMismatchError(BisiftError, ValueError):
    """A histogram was built with a different vocabulary than the index."""


class UndefinedRecallError(BisiftError, ValueError):
    """Recall or average precision requested for an empty relevant set."""


class IncompleteResultsError(BisiftError, ValueError):
    """A ground-truth query has no rank list."""


class InvalidInputError(BisiftError, ValueError):
    """A command was given an input it cannot process."""


class AuditError(BisiftError):
    """Two kernels that must agree returned different answers."""
