"""
Exception hierarchy for the toolkit.

Every error carries a short ``category`` used by the CLI for its one-line
machine-parseable failure message.
"""

from typing import Optional


class ToolkitError(Exception):
    category = "toolkit"


class ArchSyntaxError(ToolkitError, ValueError):
    category = "arch-syntax"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ArchSemanticError(ToolkitError, ValueError):
    category = "arch-semantic"


class ShapeError(ToolkitError, ValueError):
    category = "shape"


class FormatError(ToolkitError, ValueError):
    category = "format"


class TruncationError(FormatError):
    category = "truncated"


class CountMismatchError(FormatError):
    category = "count-mismatch"


class RecordSizeError(FormatError):
    category = "record-size"


class LabelRangeError(ToolkitError, ValueError):
    category = "label-range"


class DivergenceError(ToolkitError, ArithmeticError):
    category = "divergence"


class MissingLogitsError(ToolkitError, KeyError):
    category = "missing-logits"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ConfigError(ToolkitError, ValueError):
    category = "config-parse"

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownKeyError(ConfigError):
    category = "config-unknown-key"


class InvalidValueError(ConfigError):
    category = "config-invalid-value"


class MissingPathError(ConfigError):
    category = "config-missing-path"


class StageError(ToolkitError, RuntimeError):
    category = "stage"

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class ForwardCacheError(ToolkitError, RuntimeError):
    category = "forward-cache"
