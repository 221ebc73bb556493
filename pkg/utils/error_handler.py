import json
import traceback
import logging
from collections import deque


class ToolkitError(Exception):
    """Base class for every data/model error raised by the toolkit"""


class IngestError(ToolkitError):
    pass


class EmptyCorpusError(ToolkitError):
    pass


class EmbeddingLoadError(ToolkitError):
    pass


class AnnotationError(ToolkitError):
    pass


class SamplingError(ToolkitError):
    pass


class ModelShapeError(ToolkitError):
    pass


class UnsupportedModelError(ToolkitError):
    pass


class TrainingDivergenceError(ToolkitError):
    pass


class DatasetTooSmallError(ToolkitError):
    pass


class StatisticsError(ToolkitError):
    pass


class LeakageError(ToolkitError):
    pass


class CheckpointError(ToolkitError):
    pass


class ErrorHandler:
    """Turns failures at the CLI boundary into one diagnostic line and a manifest record"""

    def __init__(self, max_history=50):
        self.logger = logging.getLogger(__name__)
        self.history = deque(maxlen=max_history)

    def handle_error(self, error, context="unknown operation"):
        """Record an error and return a one-line message for the user"""
        message = self._describe(error, context)
        self.history.append({
            "context": context,
            "error_type": type(error).__name__,
            "message": message,
        })
        self.logger.error(message)
        self.logger.debug("traceback: %s", traceback.format_exc())
        return message

    def _describe(self, error, context):
        if isinstance(error, ToolkitError):
            return f"{context} failed: {error}"
        if isinstance(error, FileNotFoundError):
            return f"{context} failed: file not found ({error.filename})"
        if isinstance(error, PermissionError):
            return f"{context} failed: permission denied ({error.filename})"
        if isinstance(error, json.JSONDecodeError):
            return f"{context} failed: malformed JSON at line {error.lineno}"
        if isinstance(error, (ValueError, KeyError)):
            return f"{context} failed: invalid input ({error})"
        if len(str(error)) > 200:
            return f"{context} failed: {type(error).__name__}, see run.log"
        return f"{context} failed: {error}"

    def last_error(self):
        return self.history[-1] if self.history else None
