"""Exception hierarchy shared across the package."""


class RecTuneError(Exception):
    """Base class for all package errors."""


class ValidationError(RecTuneError):
    """Input failed validation; ``path`` names the offending field when known."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ScenarioError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class SkillError(ValidationError):
    pass


class MetricError(ValidationError):
    pass


class ExperimentError(RecTuneError):
    pass


class NotReadyError(ExperimentError):
    """Results fetched before the experiment finished."""


class StoreError(RecTuneError):
    pass


class TransitionError(StoreError):
    pass


class LockConflictError(StoreError):
    pass


class EvolutionError(RecTuneError):
    pass


class ProposalError(RecTuneError):
    """LLM proposal failed; ``excerpt`` holds the start of the raw response."""

    def __init__(self, message, excerpt=""):
        self.excerpt = excerpt
        super().__init__(f"{message} (response excerpt: {excerpt[:200]!r})" if excerpt else message)
