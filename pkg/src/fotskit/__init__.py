"""Oriented text spotting with shared convolutions, in numpy."""
from .errors import (
    DegenerateBoxError, DimensionError, FotsError, InfeasibleLabelError, NumericError,
    ParseError, TrainingAbort,
)

__version__ = "0.1.0"
