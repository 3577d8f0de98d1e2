"""Exception types shared across the package."""


class RvioError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RvioError, ValueError):
    pass


class ParseError(RvioError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class StreamIntegrityError(RvioError, ValueError):
    """Timestamps out of order, duplicated, or with an implausible gap."""


class NumericalHealthError(RvioError, ArithmeticError):
    """Covariance lost symmetry/positive-definiteness or went non-finite."""


class DivergenceError(RvioError):
    """Filter residual exceeded the divergence threshold at ``frame``."""

    def __init__(self, message, frame=None):
        self.frame = frame
        super().__init__(message if frame is None else f"frame {frame}: {message}")


class DivergenceWarning(UserWarning):
    pass


class AlignmentError(RvioError, ValueError):
    pass


class RenderError(RvioError, ValueError):
    pass


class UndefinedLossError(RvioError, ValueError):
    """No valid pixels left to average over."""


class ObjectiveError(RvioError, ArithmeticError):
    """Objective was non-finite at a perturbed parameter; ``coordinate`` says which."""

    def __init__(self, message, coordinate=None):
        self.coordinate = coordinate
        super().__init__(message if coordinate is None else f"coordinate {coordinate}: {message}")
