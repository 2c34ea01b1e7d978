"""procuraudit - pipeline exceptions"""

from __future__ import annotations


class ProcurauditError(Exception):
    """Base class. exit_code is what cli.main returns for it."""

    exit_code = 1


# ---------- input / schema / config (exit 2) ----------

class SchemaError(ProcurauditError):
    exit_code = 2


class ParseError(ProcurauditError):
    exit_code = 2

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnreadableFileError(ProcurauditError):
    exit_code = 2


class ConfigError(ProcurauditError):
    exit_code = 2


# ---------- features / models (exit 3) ----------

class DegenerateInputError(ProcurauditError):
    exit_code = 3


class AlignmentError(ProcurauditError):
    exit_code = 3


class EmptyVocabularyError(ProcurauditError):
    exit_code = 3


class InsufficientDataError(ProcurauditError):
    exit_code = 3


class DimensionError(ProcurauditError):
    exit_code = 3


class SingularDesignError(ProcurauditError):
    exit_code = 3


class DegenerateAfterExclusionError(ProcurauditError):
    exit_code = 3


# ---------- explain (exit 4) ----------

class SingleClassError(ProcurauditError):
    exit_code = 4
