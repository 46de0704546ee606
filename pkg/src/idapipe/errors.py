"""Exception types shared across the pipeline stages."""
from __future__ import annotations


class PipelineError(Exception):
    """Base class for all domain errors raised by this package."""


class EmptyDataset(PipelineError):
    """Ingest found no usable images."""


class KeyConflict(PipelineError):
    """Two augmentation records share a key but disagree on payload."""


class MissingTemplate(PipelineError):
    """Prompt catalog has no templates for the requested domain."""


class PlanInfeasible(PipelineError):
    """Requested k exceeds the number of eligible target domains."""


class InvalidRequest(PipelineError):
    """Generation request payload does not match its mode."""


class BackendUnavailable(PipelineError):
    """Remote backend could not be reached."""


class BackendTimeout(PipelineError):
    """Remote backend did not answer within the configured deadline."""


class PartialResult(PipelineError):
    """Fewer unique prompts than requested after the retry cap."""

    def __init__(self, message: str, obtained: list):
        super().__init__(message)
        self.obtained = obtained


class EmptyInput(PipelineError):
    """An aggregation was asked to operate on an empty collection."""


class UndefinedMetric(PipelineError):
    """Metric denominator is zero; the value is not applicable."""


class MissingSplit(PipelineError):
    """Evaluation protocol requires a split the index does not provide."""


class TrainingDiverged(PipelineError):
    """Loss became non-finite during training."""


class ConfigError(PipelineError):
    """Configuration file or override is malformed."""
