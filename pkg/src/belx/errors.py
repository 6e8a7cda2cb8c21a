"""Shared exception hierarchy.

Exit-code mapping used by the CLI: ConfigError -> 2, InvariantViolation -> 4,
every other BelxError -> 3.
"""


class BelxError(Exception):
    """Base class for all belx failures."""


class ConfigError(BelxError):
    """Invalid configuration or command-line arguments."""


class FormatError(BelxError):
    """A file does not match its declared or detected format."""


class StageError(BelxError):
    """A pipeline stage failed; message names the stage to re-run."""


class InvariantViolation(BelxError):
    """A hard internal invariant was violated (indicates a pipeline bug)."""


class DegenerateVectorError(BelxError):
    """A zero or non-finite vector where a direction is required."""


class MissingEmbeddingError(BelxError):
    """File-backed encoder has no vector for a requested string."""


class RemoteTransportError(BelxError):
    """A remote call failed after all retry attempts."""


class NumericError(BelxError):
    """A non-finite value appeared in a numeric computation."""
