"""Exception hierarchy shared across the package."""


class ReflectgradeError(Exception):
    """Base class for all errors raised by this package."""


class RubricError(ReflectgradeError):
    """Invalid rubric document or score vector."""


class CorpusError(ReflectgradeError):
    """Invalid reflections or annotations input."""


class BackendError(ReflectgradeError):
    """Chat backend failure (network, auth, configuration)."""


class ScriptError(BackendError):
    """Scripted backend has no entry for the requested (role, key)."""


class ParseError(ReflectgradeError):
    """Agent output did not match the expected schema.

    Carries the offending fragment so repair prompts can echo it back.
    """

    def __init__(self, message: str, fragment: str = ""):
        super().__init__(message)
        self.fragment = fragment


class CommentLengthError(ReflectgradeError):
    """Feedback comment violates the word cap, or is empty after truncation."""


class StageError(ReflectgradeError):
    """A pipeline stage failed; records which stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class CorpusGradingError(ReflectgradeError):
    """Every reflection in a grading run failed."""

    def __init__(self, outcomes):
        super().__init__("all reflections failed")
        self.outcomes = outcomes


class MetricsError(ReflectgradeError):
    """Metric cannot be computed from the given inputs."""


class DegenerateAgreementError(MetricsError):
    """Agreement statistic is undefined (no variance to correct for)."""


class CostingError(ReflectgradeError):
    """Cost or latency report cannot be computed."""
