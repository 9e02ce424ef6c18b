"""Exception and warning types shared across the toolkit."""


class RelictError(Exception):
    """Base class for all toolkit errors."""


class FormatError(RelictError):
    """A file does not conform to its declared format (bad magic, header)."""


class DimensionError(RelictError):
    """Shapes or declared sizes are inconsistent."""


class DataError(RelictError):
    """Values violate a data invariant (NaN/Inf, negative labels, bad spacing)."""


class WindowError(RelictError):
    """A volume is too small for the requested filter window."""


class RangeError(RelictError):
    """A raw measure value lies outside its admissible range."""


class DegenerateInputError(RelictError):
    """An input is degenerate for the requested operation (zero vector, no labels)."""


class InputError(RelictError):
    """A required input is missing or inconsistent for the requested computation."""


class CorpusError(RelictError):
    """A corpus manifest is invalid or refers to missing files."""


class IncompleteRatingsError(RelictError):
    """The ratings log does not cover every pair/rater/round needed."""


class DegenerateLabelsError(RelictError):
    """Reference labels contain only a single class; a sweep is meaningless."""


class IoError(RelictError):
    """An output location cannot be written."""


class ConstantInputWarning(UserWarning):
    """A constant volume was normalized; the result is all zeros."""
