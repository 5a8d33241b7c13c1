"""Exception types shared across the package."""


class SimgraphError(Exception):
    """Base class for package-specific failures."""


class DataFormatError(SimgraphError):
    """A data file is malformed: truncated record, inconsistent dims, bad header."""


class GraphFormatError(SimgraphError):
    """A serialized graph blob has a bad magic, version, or length."""


class GraphValidationError(SimgraphError):
    """A graph violates its structural invariants."""


class ConfigError(SimgraphError):
    """An experiment config is missing fields or violates cross-field constraints."""


class DivergenceError(SimgraphError):
    """Training produced non-finite rewards or parameters."""
