"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PipelineError):
    """Malformed manifest line; message carries the 1-based line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class VocabularyError(PipelineError):
    """Unknown object or scene-class name."""


class FormatError(PipelineError):
    """Structurally invalid manifest or artifact file."""


class DimensionError(PipelineError):
    """A score vector or descriptor has the wrong length."""


class VariantError(PipelineError):
    """Operation applied to the wrong detection variant (hard vs soft)."""


class ModelError(PipelineError):
    """Model construction failed, e.g. a scene class with no images."""


class CompatibilityError(PipelineError):
    """Artifacts built against different vocabularies, classes, or shapes."""
