"""Exception hierarchy shared across the package."""


class ConvToxError(Exception):
    """Base class for every error raised by convtox."""


class StructuralError(ConvToxError):
    """A conversation tree is corrupt (cycle, cross-file id clash)."""

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


class MalformedPostError(StructuralError):
    """A post file contains records but no root."""


class ParseError(ConvToxError):
    """A record could not be decoded."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None,
                 path: str | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}:"
        if line is not None:
            loc += f"{line}:"
        super().__init__(f"{loc} {message}".strip() if loc else message)
        self.detail = message
        self.line = line
        self.field = field
        self.path = path


class FormatError(ParseError):
    """Input document has an unrecognised top-level shape."""


class MetricError(ConvToxError):
    """Metrics were requested for a tree that is not fully scored."""


class ScorerUnavailableError(ConvToxError):
    """Remote scorer could not be reached within the retry budget."""


class ProtocolError(ConvToxError):
    """Remote scorer answered with a malformed payload."""


class UndefinedCorrelationError(ConvToxError, ValueError):
    """Correlation requested on a zero-variance sample."""


class SingularDesignError(ConvToxError, ValueError):
    """Regression design matrix is rank deficient."""


class ComparisonError(ConvToxError):
    """Group comparison lacks one of the consent classes."""


class ParameterError(ConvToxError, ValueError):
    """Invalid generator or analysis parameter."""
