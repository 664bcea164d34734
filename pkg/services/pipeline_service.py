"""Document privatization: budget scaling, strategies S1-S4, dataset batches."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from typing import Iterable, List, Literal, Optional, Set, TextIO

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.schemas import (
    CollToken,
    CompositionEntry,
    CompositionLog,
    ConnectorList,
    DatasetSummary,
    Document,
    ErrorResponse,
    MechanismConfig,
    OOVEvent,
    PrivatizationPlan,
    PrivatizedRecord,
    Sentence,
    Strategy,
)
from services.collocation_service import ScoredTable
from services.corpus_service import default_connectors, normalize, sentenceize, word_tokenize
from services.embedding_service import EmbeddingModel, distance
from services.mechanism_service import Mechanism, derive_rng
from services.tokenize_service import gst, mst
from utils.errors import CollodpError, DatasetParseError, DegeneratePlanError, InvalidConfigError
from utils.log_context import doc_id_var

logger = logging.getLogger(__name__)

OOVBudget = Literal["split", "repeat"]


class StrategyConfig(BaseModel):
    """Everything needed to privatize documents under one strategy."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    strategy: Strategy
    base_epsilon: float = Field(gt=0.0)
    connectors: ConnectorList = Field(default_factory=default_connectors)
    bigrams: Optional[ScoredTable] = None
    trigrams: Optional[ScoredTable] = None
    word_model: Optional[EmbeddingModel] = None
    coll_model: Optional[EmbeddingModel] = None
    mechanism: MechanismConfig = Field(default_factory=MechanismConfig)
    # How an OOV token's budget is shared by its backoff pieces
    oov_budget: OOVBudget = "split"
    prune: bool = False

    @model_validator(mode="after")
    def check_resources(self):
        if self.strategy == "S1":
            if self.word_model is None:
                raise ValueError("S1 requires a word-level model")
        elif self.coll_model is None or self.bigrams is None or self.trigrams is None:
            raise ValueError(f"{self.strategy} requires a collocation model and bigram/trigram tables")
        return self

    @property
    def model(self) -> EmbeddingModel:
        return self.word_model if self.strategy == "S1" else self.coll_model

    @cached_property
    def perturber(self) -> Mechanism:
        return Mechanism.from_config(self.model, self.mechanism, prune=self.prune)


def build_strategy_config(**kwargs) -> StrategyConfig:
    """``StrategyConfig`` with validation failures raised as ``InvalidConfigError``."""
    try:
        return StrategyConfig(**kwargs)
    except ValueError as e:
        raise InvalidConfigError(f"Invalid strategy configuration: {e}") from e


def doc_budget(base_epsilon: float, avg_words_per_text: float) -> float:
    """Document-level budget: base (per-word) epsilon times average words per text."""
    if base_epsilon <= 0 or avg_words_per_text <= 0:
        raise InvalidConfigError(
            "base epsilon and average words per text must be positive",
            {"base_epsilon": base_epsilon, "avg_words_per_text": avg_words_per_text},
        )
    return base_epsilon * avg_words_per_text


def compute_avg_words(documents: Iterable[Document]) -> float:
    """Mean word count per document (0.0 for an empty dataset)."""
    total = count = 0
    for doc in documents:
        total += len(word_tokenize(normalize(doc.text)))
        count += 1
    return total / count if count else 0.0


def _word_tokens(sentences: List[Sentence]) -> List[CollToken]:
    return [
        CollToken(surface=w, word_len=1, start=i, end=i + 1)
        for s in sentences
        for i, w in enumerate(s.words)
    ]


def plan(
    sentences: List[Sentence],
    cfg: StrategyConfig,
    avg_words_per_text: float,
) -> PrivatizationPlan:
    """
    Tokenize a sentenceized document and assign per-token budgets.

    S1: words, connectors skipped, doc budget shared by privatized words.
    S2: GST tokens, each at doc budget / #words.
    S3: GST tokens, S4: MST tokens, each at doc budget / #tokens.
    """
    word_count = sum(len(s.words) for s in sentences)
    if word_count == 0:
        raise DegeneratePlanError("Document has no words")
    doc_eps = doc_budget(cfg.base_epsilon, avg_words_per_text)

    if cfg.strategy == "S1":
        tokens = _word_tokens(sentences)
        skipped = [i for i, t in enumerate(tokens) if t.surface in cfg.connectors]
        if len(skipped) == len(tokens):
            raise DegeneratePlanError(
                "Every word is a connector word; nothing to privatize",
                {"words": word_count},
            )
        share = doc_eps / (len(tokens) - len(skipped))
        skipped_set = set(skipped)
        per_token = [None if i in skipped_set else share for i in range(len(tokens))]
        return PrivatizationPlan(
            strategy="S1", doc_epsilon=doc_eps, tokens=tokens,
            per_token_epsilon=per_token, skipped=skipped, word_count=word_count,
        )

    tokenizer = mst if cfg.strategy == "S4" else gst
    tokens = [t for s in sentences for t in tokenizer(s, cfg.bigrams, cfg.trigrams).tokens]
    divisor = word_count if cfg.strategy == "S2" else len(tokens)
    share = doc_eps / divisor
    return PrivatizationPlan(
        strategy=cfg.strategy, doc_epsilon=doc_eps, tokens=tokens,
        per_token_epsilon=[share] * len(tokens), word_count=word_count,
    )


def _backoff_pieces(token: CollToken, model: EmbeddingModel) -> List[str]:
    """Split an out-of-vocabulary bi/trigram into smaller surfaces."""
    words = token.words
    if len(words) == 3:
        if f"{words[0]}_{words[1]}" in model:
            return [f"{words[0]}_{words[1]}", words[2]]
        if f"{words[1]}_{words[2]}" in model:
            return [words[0], f"{words[1]}_{words[2]}"]
    return list(words)


def privatize_document(
    doc: Document,
    cfg: StrategyConfig,
    avg_words_per_text: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> PrivatizedRecord:
    """
    Perturb every planned token independently at its per-token budget.

    ``avg_words_per_text`` defaults to the document's own word count and
    ``rng`` to the stream derived from (mechanism seed, document id).
    Out-of-vocabulary bi/trigrams back off to smaller pieces; unigrams that
    are still unknown are copied verbatim without spending budget.
    """
    ctx = doc_id_var.set(doc.id)
    try:
        sentences = sentenceize(doc.text)
        if avg_words_per_text is None:
            avg_words_per_text = float(sum(len(s.words) for s in sentences))
        p = plan(sentences, cfg, avg_words_per_text)
        rng = rng if rng is not None else derive_rng(cfg.mechanism.seed, doc.id)
        model, mechanism = cfg.model, cfg.perturber

        outputs: List[str] = []
        spent: List[float] = []
        oov: List[OOVEvent] = []
        self_subs = 0
        for i, (token, eps) in enumerate(zip(p.tokens, p.per_token_epsilon)):
            if eps is None:
                outputs.append(token.surface)
                continue

            if token.surface in model:
                outcome = mechanism.perturb(token.surface, eps, rng)
                outputs.append(outcome.output)
                spent.append(eps)
                self_subs += outcome.self_substituted
                logger.debug(f"{token.surface!r} -> {outcome.output!r} (eps={eps:.4f}, |z|={outcome.noise_norm:.4f})")
                continue

            if token.word_len == 1:
                logger.warning(f"Copying out-of-vocabulary word {token.surface!r}")
                oov.append(OOVEvent(index=i, surface=token.surface, action="copied"))
                outputs.append(token.surface)
                continue

            pieces = _backoff_pieces(token, model)
            piece_eps = eps / len(pieces) if cfg.oov_budget == "split" else eps
            logger.warning(f"Backing off out-of-vocabulary {token.surface!r} to {pieces}")
            oov.append(OOVEvent(index=i, surface=token.surface, action="backoff", pieces=pieces))
            piece_outputs = []
            for piece in pieces:
                if piece in model:
                    piece_outputs.append(mechanism.perturb(piece, piece_eps, rng).output)
                    spent.append(piece_eps)
                else:
                    piece_outputs.append(piece)
            output = "_".join(piece_outputs)
            self_subs += output == token.surface
            outputs.append(output)

        return PrivatizedRecord(
            id=doc.id,
            original=doc.text,
            privatized=" ".join(o.replace("_", " ") for o in outputs),
            strategy=cfg.strategy,
            mechanism=cfg.mechanism.kind,
            epsilon_base=cfg.base_epsilon,
            epsilon_doc=p.doc_epsilon,
            epsilon_spent=math.fsum(spent),
            tokens=[t.surface for t in p.tokens],
            per_token_epsilon=p.per_token_epsilon,
            output_tokens=outputs,
            self_subs=self_subs,
            skipped=p.skipped,
            oov=oov,
        )
    finally:
        doc_id_var.reset(ctx)


def record_summary(record: PrivatizedRecord) -> DatasetSummary:
    """Counters contributed by one record."""
    if record.error is not None:
        return DatasetSummary(records=1, failed=1)
    if record.warning == DegeneratePlanError.error_code:
        return DatasetSummary(records=1, degenerate=1)

    copied = {e.index for e in record.oov if e.action == "copied"}
    lengths: dict = {}
    for surface in record.tokens:
        n = surface.count("_") + 1
        lengths[n] = lengths.get(n, 0) + 1
    return DatasetSummary(
        records=1,
        tokens=len(record.tokens),
        privatized_tokens=record.privatized_count,
        perturbations=record.privatized_count - len(copied),
        self_substitutions=record.self_subs,
        oov_backoffs=sum(1 for e in record.oov if e.action == "backoff"),
        oov_copied=len(copied),
        token_lengths=dict(sorted(lengths.items())),
    )


def _privatize_safely(doc: Document, cfg: StrategyConfig, avg_words: float) -> PrivatizedRecord:
    ctx = doc_id_var.set(doc.id)
    try:
        return privatize_document(doc, cfg, avg_words, derive_rng(cfg.mechanism.seed, doc.id))
    except DegeneratePlanError as e:
        logger.warning(f"Emitting original text: {e.message}")
        return PrivatizedRecord(
            id=doc.id,
            original=doc.text,
            privatized=doc.text,
            strategy=cfg.strategy,
            mechanism=cfg.mechanism.kind,
            epsilon_base=cfg.base_epsilon,
            epsilon_doc=doc_budget(cfg.base_epsilon, avg_words) if avg_words > 0 else None,
            warning=e.error_code,
        )
    except CollodpError as e:
        logger.warning(f"Record failed: {e.message}")
        error = ErrorResponse(**e.to_dict())
    except Exception as e:
        logger.error(f"Unexpected failure: {e}", exc_info=True)
        error = ErrorResponse(error_code="INTERNAL_ERROR", message=str(e))
    finally:
        doc_id_var.reset(ctx)
    return PrivatizedRecord(
        id=doc.id,
        original=doc.text,
        strategy=cfg.strategy,
        mechanism=cfg.mechanism.kind,
        epsilon_base=cfg.base_epsilon,
        error=error,
    )


def privatize_dataset(
    documents: Iterable[Document],
    cfg: StrategyConfig,
    sink: TextIO,
    avg_words_per_text: Optional[float] = None,
    threads: int = 1,
) -> DatasetSummary:
    """
    Privatize every document and write one JSON line per record, in input
    order. Per-record failures are logged and counted; the batch goes on.

    Raises ``InvalidConfigError`` for a non-positive ``avg_words_per_text``
    and ``DatasetParseError`` for a repeated document id, before any
    record is written.
    """
    started = time.perf_counter()
    if avg_words_per_text is not None and avg_words_per_text <= 0:
        raise InvalidConfigError(
            f"average words per text must be positive, got {avg_words_per_text}",
            {"avg_words_per_text": avg_words_per_text},
        )
    documents = list(documents)
    seen: Set[str] = set()
    for i, doc in enumerate(documents, start=1):
        if doc.id in seen:
            raise DatasetParseError(i, f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
    if avg_words_per_text is None:
        avg_words_per_text = compute_avg_words(documents)
        logger.info(f"Average words per text: {avg_words_per_text:.2f} over {len(documents)} documents")

    cfg.perturber  # build the shared mechanism before fanning out
    summary = DatasetSummary(avg_words_per_text=avg_words_per_text)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        records = executor.map(lambda d: _privatize_safely(d, cfg, avg_words_per_text), documents)
        for record in records:
            sink.write(record.to_json_line() + "\n")
            summary = summary.merge(record_summary(record))

    summary = summary.model_copy(update={"elapsed_seconds": time.perf_counter() - started})
    logger.info(
        f"Privatized {summary.records} records ({summary.failed} failed, {summary.degenerate} degenerate), "
        f"self-substitution rate {summary.self_sub_rate:.4f}"
    )
    return summary


def composition_log(record: PrivatizedRecord, model: EmbeddingModel) -> CompositionLog:
    """
    Per-token (epsilon, d(input, output)) pairs of a record and their sum,
    the log of the product of per-token ratio bounds. Tokens whose input or
    output is not a model token (skipped, copied, backed off) are left out.
    """
    entries: List[CompositionEntry] = []
    for i, (src, out, eps) in enumerate(zip(record.tokens, record.output_tokens, record.per_token_epsilon)):
        if eps is None or src not in model or out not in model:
            continue
        entries.append(CompositionEntry(index=i, input=src, output=out, epsilon=eps, distance=distance(model, src, out)))
    return CompositionLog(
        entries=entries,
        log_bound=math.fsum(e.epsilon * e.distance for e in entries),
    )
