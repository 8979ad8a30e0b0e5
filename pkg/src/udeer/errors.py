"""Exception types raised across the pipeline.

Every error the package raises deliberately derives from ``UdeerError`` so
callers (notably the CLI) can map failures onto stable exit codes.
"""


class UdeerError(Exception):
    """Base class for all errors raised by this package."""


# --- parsing / file format -------------------------------------------------

class MissingKey(UdeerError):
    def __init__(self, name: str):
        super().__init__(f"calibration key missing: {name!r}")
        self.name = name


class WrongValueCount(UdeerError):
    def __init__(self, key: str, expected: int, got: int):
        super().__init__(f"key {key!r} expects {expected} values, got {got}")
        self.key = key
        self.expected = expected
        self.got = got


class UnparsableNumber(UdeerError):
    def __init__(self, line: str):
        super().__init__(f"unparsable number in line: {line!r}")
        self.line = line


class TruncatedRecord(UdeerError):
    def __init__(self, length: int):
        super().__init__(f"byte length {length} is not a multiple of 16")
        self.length = length


class CheckpointError(UdeerError):
    """Corrupt checkpoint container or architecture mismatch."""


# --- shapes and values ------------------------------------------------------

class ShapeMismatch(UdeerError):
    pass


class NonFiniteInput(UdeerError):
    pass


class NegativeWeight(UdeerError):
    pass


class NonDivisibleResolution(UdeerError):
    pass


# --- configuration / preconditions -----------------------------------------

class DegenerateConfig(UdeerError):
    pass


class InvalidRadius(UdeerError):
    pass


class EmptyValidSet(UdeerError):
    pass


class MissingGradient(UdeerError):
    pass


class EmptyDataset(UdeerError):
    pass


class EmptyLabeledSet(UdeerError):
    pass


class NoValidPixels(UdeerError):
    pass


class ConfigError(UdeerError):
    """Malformed or incomplete run configuration file."""
