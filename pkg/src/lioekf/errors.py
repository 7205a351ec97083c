"""Exception hierarchy shared by every module of the package."""


class LioError(Exception):
    """Base class for all errors raised by lioekf."""


class AngleNearPi(LioError):
    """Rotation angle is too close to pi for the logarithm chart."""


class DtOutOfRange(LioError):
    """Integration step outside (0, 0.1] seconds."""


class EmptyImu(LioError):
    pass


class NonMonotonicStamps(LioError):
    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class MissingLeftImu(LioError):
    """No IMU sample precedes the earliest point of a scan."""


class EmptyMap(LioError):
    pass


class TooFewNeighbors(LioError):
    pass


class SingularInnovation(LioError):
    pass


class SingularPrior(LioError):
    pass


class NoCorrespondences(LioError):
    """Every point of a scan failed the correspondence gate."""


class NotStatic(LioError):
    pass


class TooShort(LioError):
    pass


class OutOfRange(LioError):
    pass


class NoVisibleFeatures(LioError):
    pass


class TooFewPoints(LioError):
    pass


class ParseError(LioError):
    """Malformed dataset file; carries the 1-based line and byte offset."""

    def __init__(self, message, path=None, line=None, offset=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if offset is not None:
            loc.append(f"byte offset {offset}")
        super().__init__(f"{': '.join(loc)}: {message}" if loc else message)
        self.path = path
        self.line = line
        self.offset = offset


NUMERIC_ERRORS = (SingularPrior, SingularInnovation, AngleNearPi)
