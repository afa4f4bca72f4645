"""Exception hierarchy shared by every tokentrim module."""


class TokenTrimError(Exception):
    """Base class for all tokentrim errors."""


class ShapeError(TokenTrimError, ValueError):
    """Array shapes disagree with the stream's token grid or head dimension."""


class FiniteError(TokenTrimError, ValueError):
    """A latent, severity or projection contains NaN or Inf."""


class EmptyChunkError(TokenTrimError, ValueError):
    """A chunk summary was requested over zero frames."""


class ConfigError(TokenTrimError, ValueError):
    """Invalid configuration value.

    ``field`` carries the dotted path of the offending setting when known.
    """

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class EmptyContextError(TokenTrimError, RuntimeError):
    """Attention was asked to read from an empty key set (over-pruned context)."""


class GeneratorError(TokenTrimError, RuntimeError):
    """The generator port failed to produce a batch."""
