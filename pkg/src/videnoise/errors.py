"""Exception hierarchy shared by all videnoise modules."""


class VidenoiseError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(VidenoiseError, ValueError):
    """An array has the wrong shape, parity or channel count."""


class ArityError(VidenoiseError, ValueError):
    """A frame window has the wrong number of entries."""


class DomainError(VidenoiseError, ValueError):
    """A scalar argument is outside its valid range."""


class DataError(VidenoiseError, ValueError):
    """A corpus, sequence or sample does not satisfy its preconditions."""


class ConfigError(VidenoiseError, ValueError):
    """Inconsistent pipeline/CLI configuration (e.g. checkpoint kind mismatch)."""


class StateError(VidenoiseError, RuntimeError):
    """An operation was applied to a model in the wrong mode (train vs eval)."""


class TrainingError(VidenoiseError, RuntimeError):
    """Training aborted (e.g. divergent loss). Carries the last good checkpoint path."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class DataWarning(UserWarning):
    """Non-fatal data issue (e.g. an augmentation mode skipped for a small image)."""
