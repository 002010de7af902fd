"""
Exception hierarchy for the architecture search engine.

Every error carries a stable ``code`` so the CLI and the MCP tools can report
``error_type`` without string matching.
"""

from typing import Optional


class SearchError(Exception):
    """Base class for all domain errors."""

    code = "SEARCH_ERROR"


class ResampleLimitExceeded(SearchError):
    """Raised when rejection sampling gives up; the constraints are too tight."""

    code = "RESAMPLE_LIMIT_EXCEEDED"


class GenomeParseError(SearchError):
    """Malformed genome document."""

    code = "PARSE_ERROR"

    def __init__(self, message: str, location: Optional[str] = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class VocabularyError(GenomeParseError):
    """A genome field holds a value outside its vocabulary."""

    code = "VOCAB_ERROR"


class MalformedGenome(SearchError):
    code = "MALFORMED_GENOME"


class ParamRangeUnsatisfiable(SearchError):
    """No scale factor puts the genome inside the parameter range."""

    code = "PARAM_RANGE_UNSATISFIABLE"


class ShapeError(SearchError):
    code = "SHAPE_ERROR"


class EvaluationFailed(SearchError):
    """An evaluator could not produce a fitness.

    ``steps_used`` is how far training got before the failure, so budget
    accounting stays exact.
    """

    code = "EVALUATION_FAILED"

    def __init__(self, message: str, steps_used: int = 0):
        self.steps_used = steps_used
        super().__init__(message)


class SearchAborted(SearchError):
    """Too many consecutive evaluation failures; a checkpoint was written."""

    code = "SEARCH_ABORTED"

    def __init__(self, message: str, checkpoint_path: Optional[str] = None):
        self.checkpoint_path = checkpoint_path
        super().__init__(message)


class ConfigError(SearchError):
    code = "CONFIG_ERROR"
