"""Pydantic schemas for domain records and request/response models."""

import json
import math
from typing import Dict, FrozenSet, List, Literal, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)

Strategy = Literal["S1", "S2", "S3", "S4"]
MechanismKind = Literal["madlib", "mahalanobis", "vickrey"]
Algorithm = Literal["gst", "mst"]


def dumps_line(obj: dict) -> str:
    """Deterministic single-line JSON (sorted keys, compact separators)."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class ErrorResponse(BaseModel):
    """Standard error response model."""
    error_code: str
    message: str
    details: Optional[dict] = None


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------


class Document(BaseModel):
    """A raw input document."""
    id: str
    text: str


class Sentence(BaseModel):
    """Normalized words of one sentence and their word offsets in the document."""
    model_config = ConfigDict(frozen=True)

    words: List[str]
    start: int = Field(default=0, ge=0)
    end: int = Field(default=0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def default_offsets(cls, data):
        if isinstance(data, dict) and "words" in data and "end" not in data:
            data = {**data, "end": data.get("start", 0) + len(data["words"])}
        return data

    @field_validator("words")
    @classmethod
    def validate_words(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("sentence must contain at least one word")
        for word in v:
            if not word or any(ch.isspace() for ch in word):
                raise ValueError(f"invalid word {word!r}")
            if word != word.lower():
                raise ValueError(f"word not normalized: {word!r}")
        return v

    @model_validator(mode="after")
    def validate_offsets(self):
        if self.end - self.start != len(self.words):
            raise ValueError("offsets do not match word count")
        return self


class ConnectorList(BaseModel):
    """Connector (stop) words barred from collocations and S1 privatization."""
    model_config = ConfigDict(frozen=True)

    words: FrozenSet[str] = frozenset()

    @field_validator("words", mode="before")
    @classmethod
    def lowercase(cls, v):
        return frozenset(w.strip().lower() for w in v if w and w.strip())

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.words

    def __len__(self) -> int:
        return len(self.words)


# ---------------------------------------------------------------------------
# Tokenization
# ---------------------------------------------------------------------------


class CollToken(BaseModel):
    """A uni-, bi- or trigram token covering words [start, end) of a sentence."""
    model_config = ConfigDict(frozen=True)

    surface: str
    word_len: Literal[1, 2, 3]
    start: int = Field(ge=0)
    end: int = Field(ge=0)
    score: float = 0.0

    @model_validator(mode="after")
    def validate_span(self):
        if self.end - self.start != self.word_len:
            raise ValueError("span length must equal word_len")
        if self.surface.count("_") != self.word_len - 1:
            raise ValueError(f"surface {self.surface!r} does not have {self.word_len} parts")
        return self

    @property
    def words(self) -> List[str]:
        return self.surface.split("_")

    @property
    def span(self) -> tuple:
        return (self.start, self.end)


class Tokenization(BaseModel):
    """Collocation tokens whose spans partition a sentence."""
    tokens: List[CollToken]
    source: Sentence

    @model_validator(mode="after")
    def validate_partition(self):
        position = 0
        for token in self.tokens:
            if token.start != position:
                raise ValueError(f"token spans leave a gap or overlap at word {position}")
            if token.words != self.source.words[token.start:token.end]:
                raise ValueError(f"token {token.surface!r} does not match sentence words")
            position = token.end
        if position != len(self.source.words):
            raise ValueError("token spans do not cover the sentence")
        return self

    @property
    def surfaces(self) -> List[str]:
        return [t.surface for t in self.tokens]


# ---------------------------------------------------------------------------
# Embeddings & mechanisms
# ---------------------------------------------------------------------------


class NeighborResult(BaseModel):
    token: str
    distance: float = Field(ge=0.0)
    index: int = Field(ge=0)


class MechanismConfig(BaseModel):
    """Mechanism selection and its parameters."""
    model_config = ConfigDict(populate_by_name=True, frozen=True)

    kind: MechanismKind = "madlib"
    epsilon: float = Field(default=1.0, gt=0.0)
    lam: float = Field(default=0.2, ge=0.0, le=1.0, alias="lambda")
    t: float = Field(default=0.5, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0, lt=2**64)


class PerturbationOutcome(BaseModel):
    input: str
    output: str
    noise_norm: float = Field(ge=0.0)
    self_substituted: bool

    @model_validator(mode="after")
    def validate_flag(self):
        if self.self_substituted != (self.input == self.output):
            raise ValueError("self_substituted must be true iff output equals input")
        return self


class DPRatioEntry(BaseModel):
    token: str
    count_w: int
    count_w2: int
    log_ratio: Optional[float] = None
    slack: Optional[float] = None
    status: Literal["ok", "violation", "inconclusive"]


class DPRatioReport(BaseModel):
    """Empirical check of P[M(w)=z] / P[M(w')=z] <= exp(eps * d(w, w'))."""
    mechanism: MechanismKind
    w: str
    w2: str
    epsilon: float
    distance: float
    bound: float
    samples: int
    confidence: float
    entries: List[DPRatioEntry]
    max_log_ratio: Optional[float] = None
    verdict: Literal["pass", "fail", "inconclusive"]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


class PrivatizationPlan(BaseModel):
    """Tokens of one document and the budget assigned to each of them.

    ``per_token_epsilon`` is aligned with ``tokens``; skipped tokens carry
    ``None`` and spend nothing.
    """
    strategy: Strategy
    doc_epsilon: float = Field(gt=0.0)
    tokens: List[CollToken]
    per_token_epsilon: List[Optional[float]]
    skipped: List[int] = Field(default_factory=list)
    word_count: int = Field(ge=1)

    @model_validator(mode="after")
    def validate_budget(self):
        if len(self.per_token_epsilon) != len(self.tokens):
            raise ValueError("per_token_epsilon must align with tokens")
        skipped = set(self.skipped)
        for i, eps in enumerate(self.per_token_epsilon):
            if (eps is None) != (i in skipped):
                raise ValueError(f"token {i}: budget must be None exactly when skipped")
            if eps is not None and eps <= 0:
                raise ValueError(f"token {i}: per-token epsilon must be positive")
        if self.total_spent > self.doc_epsilon * (1.0 + 1e-12) + 1e-9:
            raise ValueError("per-token budgets exceed the document budget")
        return self

    @property
    def privatized_indices(self) -> List[int]:
        return [i for i, eps in enumerate(self.per_token_epsilon) if eps is not None]

    @property
    def total_spent(self) -> float:
        return math.fsum(eps for eps in self.per_token_epsilon if eps is not None)


class OOVEvent(BaseModel):
    """A planned token missing from the mechanism vocabulary."""
    index: int
    surface: str
    action: Literal["backoff", "copied"]
    pieces: List[str] = Field(default_factory=list)


class PrivatizedRecord(BaseModel):
    id: str
    original: str
    privatized: Optional[str] = None
    strategy: Strategy
    mechanism: MechanismKind = "madlib"
    epsilon_base: float
    epsilon_doc: Optional[float] = None
    epsilon_spent: float = 0.0
    tokens: List[str] = Field(default_factory=list)
    per_token_epsilon: List[Optional[float]] = Field(default_factory=list)
    output_tokens: List[str] = Field(default_factory=list)
    self_subs: int = 0
    skipped: List[int] = Field(default_factory=list)
    oov: List[OOVEvent] = Field(default_factory=list)
    warning: Optional[str] = None
    error: Optional[ErrorResponse] = None

    @model_validator(mode="after")
    def validate_lengths(self):
        if self.error is None and len(self.output_tokens) != len(self.tokens):
            raise ValueError("output token count must equal input token count")
        return self

    @property
    def privatized_count(self) -> int:
        return sum(1 for eps in self.per_token_epsilon if eps is not None)

    def to_json_line(self) -> str:
        return dumps_line(self.model_dump(mode="json"))


class DatasetSummary(BaseModel):
    """Aggregate statistics of a privatization run (merged associatively)."""
    records: int = 0
    failed: int = 0
    degenerate: int = 0
    tokens: int = 0
    privatized_tokens: int = 0
    perturbations: int = 0
    self_substitutions: int = 0
    oov_backoffs: int = 0
    oov_copied: int = 0
    avg_words_per_text: float = 0.0
    elapsed_seconds: float = 0.0
    token_lengths: Dict[int, int] = Field(default_factory=dict)

    @computed_field
    @property
    def self_sub_rate(self) -> float:
        return self.self_substitutions / self.perturbations if self.perturbations else 0.0

    def merge(self, other: "DatasetSummary") -> "DatasetSummary":
        lengths = dict(self.token_lengths)
        for k, v in other.token_lengths.items():
            lengths[k] = lengths.get(k, 0) + v
        counters = (
            "records", "failed", "degenerate", "tokens", "privatized_tokens",
            "perturbations", "self_substitutions", "oov_backoffs", "oov_copied",
        )
        return DatasetSummary(
            **{name: getattr(self, name) + getattr(other, name) for name in counters},
            avg_words_per_text=self.avg_words_per_text or other.avg_words_per_text,
            elapsed_seconds=self.elapsed_seconds + other.elapsed_seconds,
            token_lengths=dict(sorted(lengths.items())),
        )


class CompositionEntry(BaseModel):
    index: int
    input: str
    output: str
    epsilon: float
    distance: float


class CompositionLog(BaseModel):
    """Per-token (epsilon, distance) pairs of a record and their summed log bound."""
    entries: List[CompositionEntry]
    log_bound: float


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class VocabMatchReport(BaseModel):
    """Model tokens whose constituent words all occur in a target vocabulary."""
    matched: Dict[int, int]
    totals: Dict[int, int]

    @computed_field
    @property
    def matched_total(self) -> int:
        return sum(self.matched.values())


class EvalReport(BaseModel):
    records: int
    cosine_mean: float = Field(ge=-1.0, le=1.0)
    self_sub_rate: float = Field(ge=0.0, le=1.0)
    token_stats: Dict[int, int] = Field(default_factory=dict)
    empty_embeddings: int = 0
    vocab_match: Optional[VocabMatchReport] = None


class BudgetRow(BaseModel):
    dataset: str
    avg_words: float
    budgets: List[float]


class BudgetTable(BaseModel):
    """Document budgets (base epsilon x average words per text) per dataset."""
    base_epsilons: List[float]
    rows: List[BudgetRow]


# ---------------------------------------------------------------------------
# HTTP service
# ---------------------------------------------------------------------------


class TokenizeRequest(BaseModel):
    text: str = Field(..., description="Raw text to tokenize")
    algorithm: Algorithm = Field(default="gst", description="Collocation tokenizer")


class TokenizeResponse(BaseModel):
    sentences: List[List[str]]
    total_score: float


class PrivatizeRequest(BaseModel):
    text: str = Field(..., description="Raw document text")
    id: str = Field(default="request", description="Document id (seeds the RNG stream)")
    strategy: Strategy = "S3"
    epsilon: float = Field(..., gt=0.0, description="Base (per-word) epsilon")
    avg_words: Optional[float] = Field(
        default=None, gt=0.0, description="Dataset average words per text; defaults to this text's word count"
    )
    mechanism: MechanismKind = "madlib"
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("strategy", mode="before")
    @classmethod
    def upper_strategy(cls, v):
        return v.upper() if isinstance(v, str) else v
