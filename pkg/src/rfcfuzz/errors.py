"""Exception hierarchy shared by the pipeline stages."""


class PipelineError(Exception):
    """Base class for every error raised by a pipeline stage."""

    stage = "pipeline"


class ConfigurationError(PipelineError):
    """Bad configuration, missing inputs, or mismatched layouts."""

    stage = "config"


class UndefinedMetricError(PipelineError, ValueError):
    stage = "eval"
