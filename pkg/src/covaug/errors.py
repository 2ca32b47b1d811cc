"""Exception types shared across the package."""


class ArgumentError(ValueError):
    """Invalid argument: out-of-range count, shape mismatch, missing label."""


class NumericalError(ArithmeticError):
    """Non-finite values or an iterative routine failed to converge."""


class ParseError(ValueError):
    """A file could not be parsed."""


class SchemaError(ValueError):
    """A file parsed but its contents have the wrong structure."""


class IncompatibleCheckpointError(ValueError):
    """A checkpoint was written with an unsupported format version."""


class NotApplicableError(ValueError):
    """The requested loss term does not exist for this model variant."""
