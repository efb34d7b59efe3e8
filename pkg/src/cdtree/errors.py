class CdtError(Exception):
    """Base class for errors raised by cdtree."""


class DataError(CdtError, ValueError):
    """Invalid input data (shapes, non-finite values, treatment coding)."""


class PartitionError(CdtError):
    """A partition that is not exhaustive and mutually exclusive."""


class EstimationError(CdtError):
    """An estimation step could not be carried out."""
