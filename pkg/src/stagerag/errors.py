"""Exception hierarchy shared across the engine.

Exit-code mapping for the CLI: UserError -> 1, TransportFamilyError -> 2,
anything else derived from StageRagError (or unexpected) -> 3.
"""


class StageRagError(Exception):
    """Base class for all engine errors."""


class UserError(StageRagError):
    """Bad input from the operator: config, flags, malformed files."""


class ConfigError(UserError):
    """Configuration failed to parse or violated an invariant."""


class TransportFamilyError(StageRagError):
    """Base for provider/network failures (CLI exit code 2)."""


class TransportError(TransportFamilyError):
    """Endpoint unreachable or connection dropped."""


class RateLimitError(TransportFamilyError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class FetchError(TransportFamilyError):
    """Document download failed."""


class ModelNotFoundError(StageRagError):
    pass


class EmptyCompletionError(StageRagError):
    pass


class DimensionMismatchError(StageRagError):
    pass


class ExtractionFailedError(StageRagError):
    """Every stage of the content-extraction fallback chain failed."""


class InvalidUrlError(UserError):
    pass


class NoEvidenceError(StageRagError):
    """Every sub-query yielded zero evidence from both retrieval arms."""


class PipelineStageError(StageRagError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


class EffectSizeUndefinedError(StageRagError):
    """Pooled standard deviation is zero; Cohen's d has no value."""
