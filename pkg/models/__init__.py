"""Pydantic models for collodp."""

from .schemas import (
    BudgetRow,
    BudgetTable,
    CollToken,
    CompositionEntry,
    CompositionLog,
    ConnectorList,
    DatasetSummary,
    Document,
    DPRatioEntry,
    DPRatioReport,
    ErrorResponse,
    EvalReport,
    MechanismConfig,
    NeighborResult,
    OOVEvent,
    PerturbationOutcome,
    PrivatizationPlan,
    PrivatizedRecord,
    PrivatizeRequest,
    Sentence,
    Tokenization,
    TokenizeRequest,
    TokenizeResponse,
    VocabMatchReport,
    dumps_line,
)

__all__ = [
    "BudgetRow",
    "BudgetTable",
    "CollToken",
    "CompositionEntry",
    "CompositionLog",
    "ConnectorList",
    "DatasetSummary",
    "Document",
    "DPRatioEntry",
    "DPRatioReport",
    "ErrorResponse",
    "EvalReport",
    "MechanismConfig",
    "NeighborResult",
    "OOVEvent",
    "PerturbationOutcome",
    "PrivatizationPlan",
    "PrivatizedRecord",
    "PrivatizeRequest",
    "Sentence",
    "Tokenization",
    "TokenizeRequest",
    "TokenizeResponse",
    "VocabMatchReport",
    "dumps_line",
]
