"""Exception types shared across fotskit."""


class FotsError(Exception):
    """Base class for all fotskit errors."""


class DimensionError(FotsError, ValueError):
    """A tensor has the wrong shape; the message names the offending axis."""


class DegenerateBoxError(FotsError, ValueError):
    """A box or polygon has (near) zero area."""


class InfeasibleLabelError(FotsError, ValueError):
    """A CTC label cannot be emitted within the available number of frames."""


class TrainingAbort(FotsError, FloatingPointError):
    """Training hit a non-finite value and cannot continue."""


class NumericError(FotsError, FloatingPointError):
    """A non-finite value appeared where a finite one was required."""


class ParseError(FotsError, ValueError):
    """Malformed input file (annotations, config, images)."""

    def __init__(self, message, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.path = path
