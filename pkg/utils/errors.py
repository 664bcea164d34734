"""Domain exceptions with stable error codes."""

from typing import Any, Dict, Optional


class CollodpError(ValueError):
    """Base class for all recoverable data/usage errors.

    Each subclass carries an ``error_code`` that is surfaced verbatim in
    ``ErrorResponse`` payloads (HTTP and CLI).
    """

    error_code = "COLLODP_ERROR"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details,
        }


class TextDecodeError(CollodpError):
    error_code = "DECODE_ERROR"

    def __init__(self, offset: int, reason: str = "invalid UTF-8", source: Optional[str] = None):
        location = f" in {source}" if source else ""
        super().__init__(
            f"Cannot decode text{location} at byte offset {offset}: {reason}",
            {"offset": offset, "source": source},
        )
        self.offset = offset


class UndefinedPMIError(CollodpError):
    error_code = "UNDEFINED_PMI"

    def __init__(self, ngram: tuple, reason: str = "zero count"):
        super().__init__(
            f"PMI undefined for n-gram {' '.join(ngram) or '<corpus>'}: {reason}",
            {"ngram": list(ngram)},
        )
        self.ngram = ngram


class _LineParseError(CollodpError):
    kind = "file"

    def __init__(self, line_no: int, reason: str, source: Optional[str] = None):
        location = f"{source}:" if source else "line "
        super().__init__(
            f"Malformed {self.kind} at {location}{line_no}: {reason}",
            {"line": line_no, "source": source, "reason": reason},
        )
        self.line_no = line_no


class TableParseError(_LineParseError):
    error_code = "TABLE_PARSE_ERROR"
    kind = "collocation table"


class ModelParseError(_LineParseError):
    error_code = "MODEL_PARSE_ERROR"
    kind = "embedding model"


class DatasetParseError(_LineParseError):
    error_code = "DATASET_PARSE_ERROR"
    kind = "dataset record"


class OutOfVocabularyError(CollodpError):
    error_code = "OUT_OF_VOCABULARY"

    def __init__(self, token: str):
        super().__init__(f"Token not in embedding vocabulary: {token!r}", {"token": token})
        self.token = token


class EmptyVocabularyError(CollodpError):
    error_code = "EMPTY_VOCABULARY"


class DimensionMismatchError(CollodpError):
    error_code = "DIMENSION_MISMATCH"

    def __init__(self, expected: int, actual: int):
        super().__init__(
            f"Vector dimension {actual} does not match model dimension {expected}",
            {"expected": expected, "actual": actual},
        )


class DegeneratePlanError(CollodpError):
    error_code = "DEGENERATE_PLAN"


class MisalignedRecordsError(CollodpError):
    error_code = "MISALIGNED_RECORDS"


class ZeroBaselineError(CollodpError):
    error_code = "ZERO_BASELINE"


class EmptyDatasetError(CollodpError):
    error_code = "EMPTY_DATASET"


class InvalidConfigError(CollodpError):
    error_code = "INVALID_CONFIG"
