"""Exception hierarchy shared by every stage of the pipeline."""


class RawAscError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(RawAscError):
    """Malformed input file (bad RIFF header, truncated weight container, ...)."""


class UnsupportedFormatError(RawAscError):
    """Well-formed input that uses a feature we do not read (e.g. 24-bit PCM)."""


class SchemaError(RawAscError):
    """Manifest or config content does not match the expected columns/keys."""


class EmptyDatasetError(RawAscError):
    pass


class DimensionError(RawAscError, ValueError):
    """Array shapes are inconsistent with each other or with a layer spec."""


class ParameterError(RawAscError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ConsistencyError(RawAscError):
    pass


class NumericError(RawAscError, ArithmeticError):
    pass


class DegenerateSpectrumError(RawAscError):
    pass


class DegenerateLabelsError(RawAscError):
    pass


class StageError(RawAscError):
    """Failure inside an experiment stage; carries stage and layer for reporting."""

    def __init__(self, stage, cause, layer=None):
        self.stage = stage
        self.layer = layer
        self.cause = cause
        where = stage if layer is None else f"{stage}:{layer}"
        detail = f"{type(cause).__name__}: {cause}" if isinstance(cause, BaseException) else str(cause)
        super().__init__(f"[{where}] {detail}")
