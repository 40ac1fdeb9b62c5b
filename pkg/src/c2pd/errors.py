"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: input/format/config
problems exit 2, non-finite numerics exit 3, training divergence exit 4.
"""


class C2pdError(Exception):
    """Base class for all library errors."""


class GridSizeError(C2pdError, ValueError):
    """A grid dimension or resampling factor is invalid."""


class ShapeMismatchError(C2pdError, ValueError):
    """Two grids, or a grid and an operator, disagree on dimensions."""


class ValidationError(C2pdError, ValueError):
    """A value violates a domain invariant (range, finiteness, layer chain)."""


class NumericError(C2pdError, ArithmeticError):
    """A computation produced or received non-finite values."""


class FormatError(C2pdError, ValueError):
    """A file does not conform to its declared on-disk format."""


class ConfigError(C2pdError, ValueError):
    """A configuration file or key set is invalid."""


class TrainingDiverged(C2pdError, RuntimeError):
    """The training objective became non-finite."""
