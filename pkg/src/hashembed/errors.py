# src/hashembed/errors.py
"""Exception hierarchy shared by every hashembed module."""


class HashEmbError(Exception):
    """Base class for all hashembed failures."""


class InputDomainError(HashEmbError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class ParseError(HashEmbError):
    """A data file could not be parsed."""

    def __init__(self, path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        self.reason = reason
        super().__init__(f"{self.path}:{line}: {reason}")


class DataValidationError(HashEmbError):
    """Parsed data violates a declared constraint (label range, class count...)."""


class FormatError(HashEmbError):
    """A binary artifact has the wrong magic bytes or format version."""


class UnsupportedModeError(HashEmbError):
    """The operation is not defined for the embedding's configuration."""


class ResourceError(HashEmbError, MemoryError):
    """Parameter tables could not be allocated."""

    def __init__(self, required_bytes: int):
        self.required_bytes = required_bytes
        super().__init__(
            f"could not allocate {required_bytes:,} bytes for embedding parameters"
        )
