"""Exception types shared across the package."""

from __future__ import annotations


class GroundingError(Exception):
    """Base class for all errors raised by spatialground."""


class EmptyCluster(GroundingError, ValueError):
    pass


class BackendMismatch(GroundingError, ValueError):
    pass


class RelationArity(GroundingError, ValueError):
    pass


class NoCandidates(GroundingError):
    pass


class ParseFailure(GroundingError, ValueError):
    """The rule parser could not find a head noun.

    ``span`` is the (start, end) character range the parser was looking at.
    """

    def __init__(self, message: str, text: str = "", span: tuple[int, int] | None = None):
        super().__init__(message)
        self.text = text
        self.span = span if span is not None else (0, len(text))


class ReplyFormatError(GroundingError, ValueError):
    def __init__(self, message: str, span: str = ""):
        super().__init__(message)
        self.span = span


class UpstreamError(GroundingError):
    """A remote service (chat or embedding endpoint) failed."""


class EmptyEvaluation(GroundingError, ValueError):
    pass


class BenchmarkFormatError(GroundingError, ValueError):
    def __init__(self, message: str, path: str = "", locus: str = ""):
        super().__init__(f"{path}:{locus}: {message}" if path or locus else message)
        self.path = path
        self.locus = locus


class GenerationError(GroundingError):
    pass


class ConfigError(GroundingError, ValueError):
    pass
