from __future__ import annotations


class EdgeTransformerError(Exception):
    """Base class for every error raised by this project."""


class DimensionError(EdgeTransformerError, ValueError):
    """Operand extents disagree on a shared or trailing axis."""


class SpecParseError(EdgeTransformerError, ValueError):
    """An index signature passed to einsum/contract is malformed."""


class DegenerateMaskError(EdgeTransformerError, ValueError):
    """A softmax slice has no unmasked position."""


class TargetIndexError(EdgeTransformerError, IndexError):
    """A class index, token id, node index or query lies outside its range."""


class NonFiniteError(EdgeTransformerError, FloatingPointError):
    """A forward value, gradient or loss contains NaN or Inf."""


class CapacityError(EdgeTransformerError, ValueError):
    """An input is longer than the configured maximum."""
