"""
Errors Module

Exception hierarchy shared by every pipeline stage. Each error carries the
process exit code the command-line entry point reports for it.
"""

from typing import Optional


class TaggerError(Exception):
    """Base class for all expected pipeline failures."""

    exit_code = 1


class ConfigError(TaggerError):
    """Invalid or unresolvable configuration."""

    exit_code = 2


class IngestError(TaggerError):
    """Unreadable report file or malformed record in strict mode."""

    exit_code = 3

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        self.path = path
        self.line_number = line_number
        location = ""
        if path is not None:
            location = f"{path}:{line_number}: " if line_number is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class ValidationError(TaggerError):
    """A user-editable input file or intermediate artifact failed validation."""

    exit_code = 4

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        self.path = path
        self.line_number = line_number
        location = ""
        if path is not None:
            location = f"{path}:{line_number}: " if line_number is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class RuleFileError(ValidationError):
    """Syntax error, duplicate key or bad regex in a rule file."""


class WordlistError(ValidationError):
    """Malformed wordlist line or unknown category name."""


class AliasFileError(ValidationError):
    """Malformed alias file line or cyclic alias mapping."""


class CorrelationFileError(ValidationError):
    """Malformed correlation file or an engine listed in two groups."""


class DatasetError(ValidationError):
    """Tag rankings unusable for the requested dataset split."""


class EmptyTokenError(ValidationError):
    """AV label without a single alphanumeric character."""
