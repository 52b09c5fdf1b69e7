"""Exception types shared across the package."""


class MigSimError(Exception):
    """Base class for all package errors."""


class UnknownProfileError(MigSimError):
    """Profile name is not in the catalog."""


class UnknownInstanceError(MigSimError):
    """Instance id is not present in the layout."""


class InstanceBusyError(MigSimError):
    """Operation requires an idle instance but it is running a job."""


class InvalidTargetError(MigSimError):
    """Reconfiguration target overlaps itself or uses illegal placements."""


class UnsatisfiableRequestError(MigSimError):
    """No catalog profile can satisfy the requested size/memory."""


class InvalidConfigError(MigSimError):
    """Trace or experiment configuration failed validation."""


class ParseError(MigSimError):
    """Malformed trace file.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class WrongModeError(MigSimError):
    """Selection function called for a cluster in a different mode."""


class OversizedJobError(MigSimError):
    """Job size exceeds what the allocation mode supports."""


class TraceInvalidForModeError(MigSimError):
    """Trace contains jobs the requested mode cannot run."""


class InvalidDecisionError(MigSimError):
    """Allocation decision does not match the job or the cluster state."""


class IncompleteLogError(MigSimError):
    """Event log is missing arrival/start/finish records for some job."""


class DuplicateDeviceError(MigSimError):
    """Two ranks resolved to the same device during peer discovery."""

    def __init__(self, rank_a: int, rank_b: int):
        super().__init__(f"ranks {rank_a} and {rank_b} resolve to the same device")
        self.rank_a = rank_a
        self.rank_b = rank_b


class MalformedLabelError(MigSimError):
    """Bus-id label does not match the expected pattern."""
