"""Exception hierarchy.

Errors split into two families so callers (and the command line) can tell
bad input apart from a statistically degenerate sample.
"""


class ThrottleLiftError(Exception):
    """Base class for all package errors."""


class DataError(ThrottleLiftError):
    """Malformed or inconsistent input data."""


class DegeneracyError(ThrottleLiftError):
    """The sample does not support the requested estimate."""


class SchemaMismatch(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InconsistentProbability(DataError):
    def __init__(self, key):
        super().__init__(f"participated rows disagree on p for key {key!r}")
        self.key = key


class NoControls(DegeneracyError):
    def __init__(self, interval):
        super().__init__(f"no matched controls in interval {interval!r}")
        self.interval = interval


class DegenerateStratum(DegeneracyError):
    """A stratum has an empty participation arm."""


class DegenerateArm(DegeneracyError):
    """An exposure or participation arm is empty."""


class ZeroFirstStage(DegeneracyError):
    """No exposure among participated units, so the Wald ratio is undefined."""


class NoCompliers(DegeneracyError):
    pass


class InsufficientStratum(DegeneracyError):
    def __init__(self, p: float):
        super().__init__(f"stratum p={p!r} has an arm with fewer than 2 units")
        self.p = p


class EmptyArm(DegeneracyError):
    def __init__(self, interval: int, arm: int):
        super().__init__(f"interval {interval}: cannot resample from empty arm Z={arm}")
        self.interval = interval
        self.arm = arm


class BootstrapFailure(DegeneracyError):
    """Too many bootstrap replicates were discarded."""
