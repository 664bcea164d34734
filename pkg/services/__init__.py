"""Service modules for collodp."""

from .collocation_service import CountTable, ScoredTable
from .embedding_service import CovarianceSummary, EmbeddingModel
from .mechanism_service import Mechanism
from .pipeline_service import StrategyConfig

__all__ = [
    "CountTable",
    "ScoredTable",
    "CovarianceSummary",
    "EmbeddingModel",
    "Mechanism",
    "StrategyConfig",
]
