"""Shared exception types."""


class AskboxError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(AskboxError):
    """Invalid configuration value or combination."""


class EncodingError(AskboxError):
    """Text contains words outside the closed lexicon."""

    def __init__(self, words: list[str]):
        self.words = list(words)
        super().__init__(f"out-of-lexicon words: {', '.join(self.words)}")


class DecodeError(AskboxError):
    """Token sequence cannot be decoded as requested (wrong arity or token kind)."""


class TruncationError(AskboxError):
    """Sequence exceeds the model's configured capacity."""


class VocabMismatchError(AskboxError):
    """Checkpoint was built against a different vocabulary."""


class TrainingDiverged(AskboxError):
    """Loss became non-finite during training."""


class UnknownSceneError(AskboxError):
    """Scene reference does not resolve to a scene."""


class UnknownSessionError(AskboxError):
    """Session id does not exist."""


class WrongStateError(AskboxError):
    """Request is not legal in the session's current state."""
