"""Static-embedding utility proxies, relative gain and budget tables."""

import csv
import io
import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from models.schemas import (
    BudgetRow,
    BudgetTable,
    DatasetSummary,
    Document,
    EvalReport,
    PrivatizedRecord,
    VocabMatchReport,
)
from services.corpus_service import normalize, word_tokenize
from services.embedding_service import EmbeddingModel
from services.pipeline_service import doc_budget, record_summary
from utils.errors import DatasetParseError, EmptyDatasetError, MisalignedRecordsError, ZeroBaselineError
from utils.filesystem import iter_lines

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_GRID = (0.1, 0.5, 1.0, 5.0, 10.0, 15.0, 25.0, 50.0)

# Average words per text of the six published benchmark datasets
DEFAULT_AVERAGES: Dict[str, float] = {
    "CoLA": 7.80,
    "MRPC": 19.54,
    "RTE": 44.48,
    "SST2": 8.82,
    "Trustpilot": 52.16,
    "Yelp": 186.87,
}


def in_vocab_count(model: EmbeddingModel, tokens: Iterable[str]) -> int:
    return sum(1 for t in tokens if t in model)


def doc_embed(model: EmbeddingModel, tokens: Sequence[str]) -> np.ndarray:
    """Mean of the in-vocabulary token rows; zero vector when there are none."""
    rows = [model.index[t] for t in tokens if t in model]
    if not rows:
        return np.zeros(model.dim)
    return model.matrix[rows].mean(axis=0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 if either vector is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    if np.array_equal(a, b):
        return 1.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def relative_gain(u_p: float, u_o: float, p_p: float, p_o: float) -> float:
    """(U_p / U_o) - (P_p / P_o): utility kept minus adversary advantage kept."""
    if u_o <= 0 or p_o <= 0:
        raise ZeroBaselineError(
            "Baseline utility and privacy scores must be positive",
            {"u_o": u_o, "p_o": p_o},
        )
    return u_p / u_o - p_p / p_o


def vocab_match_report(model: EmbeddingModel, target_vocab: Iterable[str]) -> VocabMatchReport:
    """Per word length: model tokens whose words all occur in ``target_vocab``."""
    target = set(target_vocab)
    totals: Dict[int, int] = {}
    matched: Dict[int, int] = {}
    for token in model.vocab:
        words = token.split("_")
        n = len(words)
        totals[n] = totals.get(n, 0) + 1
        matched.setdefault(n, 0)
        if all(w in target for w in words):
            matched[n] += 1
    return VocabMatchReport(matched=dict(sorted(matched.items())), totals=dict(sorted(totals.items())))


def read_records(path: Union[str, Path]) -> Iterator[PrivatizedRecord]:
    """Stream records written by the privatization pipeline."""
    for line_no, line in iter_lines(path):
        if not line.strip():
            continue
        try:
            yield PrivatizedRecord.model_validate_json(line)
        except ValidationError as e:
            raise DatasetParseError(line_no, f"not a privatized record: {e.errors()[0]['msg']}", str(path)) from e


def _text_tokens(text: str) -> List[str]:
    return word_tokenize(normalize(text))


def cosine_rows(
    originals: Sequence[Document],
    records: Sequence[PrivatizedRecord],
    model: EmbeddingModel,
) -> List[dict]:
    """
    One row per id-aligned (original, privatized) pair with its cosine.

    Failed records (no privatized text) are left out.
    """
    if not originals and not records:
        raise EmptyDatasetError("Nothing to evaluate: both datasets are empty")
    if len(originals) != len(records):
        raise MisalignedRecordsError(
            f"Record counts differ: {len(originals)} original vs {len(records)} privatized",
            {"original": len(originals), "privatized": len(records)},
        )

    rows = []
    for i, (doc, record) in enumerate(zip(originals, records)):
        if doc.id != record.id:
            raise MisalignedRecordsError(
                f"Record {i} ids differ: {doc.id!r} vs {record.id!r}",
                {"index": i, "original_id": doc.id, "privatized_id": record.id},
            )
        if record.privatized is None:
            logger.warning(f"Skipping failed record {record.id!r}")
            continue
        orig_tokens, priv_tokens = _text_tokens(doc.text), _text_tokens(record.privatized)
        a, b = doc_embed(model, orig_tokens), doc_embed(model, priv_tokens)
        rows.append({
            "id": doc.id,
            "cosine": cosine(a, b),
            "original_in_vocab": in_vocab_count(model, orig_tokens),
            "privatized_in_vocab": in_vocab_count(model, priv_tokens),
            "empty_embedding": not (a.any() and b.any()),
        })
    return rows


def evaluate(
    originals: Sequence[Document],
    records: Sequence[PrivatizedRecord],
    model: EmbeddingModel,
    target_vocab: Optional[Iterable[str]] = None,
) -> EvalReport:
    """Mean per-record cosine and the self-substitution rate over a dataset pair."""
    rows = cosine_rows(originals, records, model)
    if not rows:
        raise EmptyDatasetError("No successfully privatized record to evaluate")

    summary = DatasetSummary()
    for record in records:
        summary = summary.merge(record_summary(record))

    report = EvalReport(
        records=len(rows),
        cosine_mean=float(np.clip(np.mean([r["cosine"] for r in rows]), -1.0, 1.0)),
        self_sub_rate=summary.self_sub_rate,
        token_stats=summary.token_lengths,
        empty_embeddings=sum(1 for r in rows if r["empty_embedding"]),
        vocab_match=vocab_match_report(model, target_vocab) if target_vocab is not None else None,
    )
    logger.info(f"Evaluated {report.records} records: cosine_mean={report.cosine_mean:.4f}, self_sub_rate={report.self_sub_rate:.4f}")
    return report


def rows_to_csv(rows: List[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(
        buffer,
        fieldnames=["id", "cosine", "original_in_vocab", "privatized_in_vocab", "empty_embedding"],
        lineterminator="\n",
    )
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def budget_table(
    base_epsilons: Sequence[float] = DEFAULT_EPSILON_GRID,
    averages: Optional[Mapping[str, float]] = None,
) -> BudgetTable:
    """Document budgets per dataset and base epsilon, rounded to 2 decimals."""
    averages = averages if averages is not None else DEFAULT_AVERAGES
    rows = [
        BudgetRow(
            dataset=name,
            avg_words=avg,
            budgets=[round(doc_budget(eps, avg), 2) for eps in base_epsilons],
        )
        for name, avg in averages.items()
    ]
    return BudgetTable(base_epsilons=list(base_epsilons), rows=rows)


def budget_table_csv(table: BudgetTable) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["dataset", "avg_words"] + [f"{eps:g}" for eps in table.base_epsilons])
    for row in table.rows:
        writer.writerow([row.dataset, f"{row.avg_words:g}"] + [f"{b:.2f}" for b in row.budgets])
    return buffer.getvalue()


def format_budget_table(table: BudgetTable) -> str:
    """Fixed-width text rendering for terminals."""
    header = ["Dataset", "Avg"] + [f"eps={eps:g}" for eps in table.base_epsilons]
    body = [
        [row.dataset, f"{row.avg_words:.2f}"] + [f"{b:.2f}" for b in row.budgets]
        for row in table.rows
    ]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in [header] + body]
    return "\n".join(lines)
