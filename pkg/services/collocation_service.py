"""N-gram counting, PMI scoring and collocation table files."""

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from models.schemas import ConnectorList, Document, Sentence
from services.corpus_service import sentenceize
from utils.atomic_write import atomic_writer
from utils.errors import TableParseError, UndefinedPMIError
from utils.filesystem import iter_lines

logger = logging.getLogger(__name__)

NgramKey = Tuple[str, ...]

MAX_ORDER = 3


class CountTable:
    """
    Uni/bi/trigram frequencies plus the total word count N.

    Words are interned to integer ids; n-grams are stored as id tuples.
    """

    def __init__(self) -> None:
        self._ids: Dict[str, int] = {}
        self._words: List[str] = []
        self._counts: Counter = Counter()
        self.total_words = 0

    def _intern(self, word: str) -> int:
        word_id = self._ids.get(word)
        if word_id is None:
            word_id = len(self._words)
            self._ids[word] = word_id
            self._words.append(word)
        return word_id

    def add_sentence(self, words: Sequence[str]) -> None:
        """Count every n-gram of order 1..3 lying inside ``words``."""
        ids = [self._intern(w) for w in words]
        self.total_words += len(ids)
        counts = self._counts
        for n in range(1, MAX_ORDER + 1):
            for i in range(len(ids) - n + 1):
                counts[tuple(ids[i:i + n])] += 1

    def _add_count(self, ngram: NgramKey, count: int) -> None:
        self._counts[tuple(self._intern(w) for w in ngram)] += count

    def count(self, ngram: Sequence[str]) -> int:
        ids = []
        for word in ngram:
            word_id = self._ids.get(word)
            if word_id is None:
                return 0
            ids.append(word_id)
        return self._counts.get(tuple(ids), 0)

    def items(self, order: Optional[int] = None) -> Iterator[Tuple[NgramKey, int]]:
        """Yield ``(words, count)`` pairs, optionally restricted to one order."""
        words = self._words
        for key, count in self._counts.items():
            if order is None or len(key) == order:
                yield tuple(words[i] for i in key), count

    def as_dict(self) -> Dict[NgramKey, int]:
        return dict(self.items())

    def merge(self, other: "CountTable") -> "CountTable":
        """New table holding the summed counts of both tables."""
        merged = CountTable()
        for table in (self, other):
            for ngram, count in table.items():
                merged._add_count(ngram, count)
            merged.total_words += table.total_words
        return merged

    @classmethod
    def from_counts(cls, counts: Mapping[Sequence[str], int]) -> "CountTable":
        """Build a table from explicit counts; N is the sum of unigram counts."""
        table = cls()
        for ngram, count in counts.items():
            ngram = tuple(ngram)
            if not 1 <= len(ngram) <= MAX_ORDER:
                raise ValueError(f"n-gram order must be 1..{MAX_ORDER}: {ngram!r}")
            if count < 0:
                raise ValueError(f"negative count for {ngram!r}")
            if count:
                table._add_count(ngram, count)
                if len(ngram) == 1:
                    table.total_words += count
        return table

    def __len__(self) -> int:
        return len(self._counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CountTable):
            return NotImplemented
        return self.total_words == other.total_words and self.as_dict() == other.as_dict()

    def __repr__(self) -> str:
        return f"CountTable(N={self.total_words}, ngrams={len(self)})"


def count_ngrams(sentences: Iterable[Sentence]) -> CountTable:
    """Count n-grams sentence by sentence (no window crosses a boundary)."""
    table = CountTable()
    for sentence in sentences:
        table.add_sentence(sentence.words)
    return table


def merge(a: CountTable, b: CountTable) -> CountTable:
    return a.merge(b)


def count_ngrams_parallel(
    shards: Iterable[Iterable[Sentence]],
    workers: int = 1,
) -> CountTable:
    """Count shards in a thread pool, then merge them in shard order."""
    result = CountTable()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        for partial in executor.map(count_ngrams, shards):
            result = result.merge(partial)
    return result


def pmi_bigram(table: CountTable, x: str, y: str) -> float:
    """log2(N * c(xy) / (c(x) * c(y)))."""
    n = table.total_words
    if n <= 0:
        raise UndefinedPMIError((), "empty corpus")
    c_xy = table.count((x, y))
    if c_xy == 0:
        raise UndefinedPMIError((x, y))
    for word in (x, y):
        if table.count((word,)) == 0:
            raise UndefinedPMIError((word,))
    return math.log2(n * c_xy / (table.count((x,)) * table.count((y,))))


def pmi_trigram(table: CountTable, x: str, y: str, z: str) -> float:
    """log2(N^2 * c(xyz) / (c(x) * c(y) * c(z)))."""
    n = table.total_words
    if n <= 0:
        raise UndefinedPMIError((), "empty corpus")
    c_xyz = table.count((x, y, z))
    if c_xyz == 0:
        raise UndefinedPMIError((x, y, z))
    for word in (x, y, z):
        if table.count((word,)) == 0:
            raise UndefinedPMIError((word,))
    return math.log2(
        n * n * c_xyz / (table.count((x,)) * table.count((y,)) * table.count((z,)))
    )


def pmi(table: CountTable, ngram: Sequence[str]) -> float:
    if len(ngram) == 2:
        return pmi_bigram(table, *ngram)
    if len(ngram) == 3:
        return pmi_trigram(table, *ngram)
    raise ValueError(f"PMI is defined for bigrams and trigrams, got {tuple(ngram)!r}")


class ScoredTable:
    """Immutable map of collocations (bi/trigrams) to PMI, with their counts."""

    def __init__(
        self,
        scores: Mapping[NgramKey, float],
        counts: Optional[Mapping[NgramKey, int]] = None,
        min_pmi: float = float("-inf"),
        min_count: int = 1,
        total_words: int = 0,
    ):
        counts = counts or {}
        for key, score in scores.items():
            if len(key) not in (2, 3):
                raise ValueError(f"collocation must be a bigram or trigram: {key!r}")
            if score < min_pmi:
                raise ValueError(f"score {score} of {key!r} is below min_pmi {min_pmi}")
        self._scores = MappingProxyType(dict(scores))
        self._counts = MappingProxyType({k: int(counts.get(k, 0)) for k in scores})
        self.min_pmi = min_pmi
        self.min_count = min_count
        self.total_words = total_words

    @property
    def scores(self) -> Mapping[NgramKey, float]:
        return self._scores

    @property
    def counts(self) -> Mapping[NgramKey, int]:
        return self._counts

    def get(self, key: NgramKey) -> Optional[float]:
        return self._scores.get(key)

    def __contains__(self, key: object) -> bool:
        return key in self._scores

    def __len__(self) -> int:
        return len(self._scores)

    def __iter__(self) -> Iterator[NgramKey]:
        return iter(self._scores)

    def of_order(self, order: int) -> "ScoredTable":
        """Sub-table holding only the n-grams of one order."""
        return ScoredTable(
            {k: v for k, v in self._scores.items() if len(k) == order},
            self._counts,
            self.min_pmi,
            self.min_count,
            self.total_words,
        )

    def ranked(self) -> List[Tuple[NgramKey, int, float]]:
        """Rows sorted by PMI descending, ties by words."""
        return sorted(
            ((k, self._counts[k], v) for k, v in self._scores.items()),
            key=lambda row: (-row[2], row[0]),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScoredTable):
            return NotImplemented
        return (
            dict(self._scores) == dict(other._scores)
            and dict(self._counts) == dict(other._counts)
            and self.total_words == other.total_words
        )

    def __repr__(self) -> str:
        return f"ScoredTable(size={len(self)}, N={self.total_words}, min_pmi={self.min_pmi})"


def filter_table(
    table: CountTable,
    min_pmi: float = 2.0,
    min_count: int = 5,
    connectors: Optional[ConnectorList] = None,
) -> ScoredTable:
    """Bi/trigrams with count >= min_count, PMI >= min_pmi and no connector word."""
    connectors = connectors or ConnectorList()
    scores: Dict[NgramKey, float] = {}
    counts: Dict[NgramKey, int] = {}
    for ngram, count in table.items():
        if len(ngram) == 1 or count < min_count:
            continue
        if any(word in connectors for word in ngram):
            continue
        score = pmi(table, ngram)
        if score >= min_pmi:
            scores[ngram] = score
            counts[ngram] = count
    logger.debug(f"Kept {len(scores)} collocations (min_pmi={min_pmi}, min_count={min_count})")
    return ScoredTable(scores, counts, min_pmi, min_count, table.total_words)


def _chunks(items: Iterable, size: int) -> Iterator[list]:
    iterator = iter(items)
    while chunk := list(islice(iterator, size)):
        yield chunk


def extract(
    documents: Iterable[Document],
    min_pmi: float = 2.0,
    min_count: int = 5,
    connectors: Optional[ConnectorList] = None,
    workers: int = 1,
    shard_size: int = 1000,
) -> Tuple[ScoredTable, ScoredTable]:
    """Count and score a document stream; returns ``(bigrams, trigrams)``."""
    shards = ((s for doc in chunk for s in sentenceize(doc.text)) for chunk in _chunks(documents, shard_size))
    counts = count_ngrams_parallel(shards, workers)
    logger.info(f"Counted {len(counts)} n-grams over {counts.total_words} words")

    scored = filter_table(counts, min_pmi, min_count, connectors)
    bigrams, trigrams = scored.of_order(2), scored.of_order(3)
    logger.info(f"Extracted {len(bigrams)} bigrams and {len(trigrams)} trigrams")
    return bigrams, trigrams


def save_table(table: ScoredTable, path: Union[str, Path]) -> Path:
    """Write ``#N=`` / threshold headers and PMI-ranked TSV rows."""
    path = Path(path)
    with atomic_writer(path) as f:
        f.write(f"#N={table.total_words}\n")
        f.write(f"#min_pmi={table.min_pmi!r} min_count={table.min_count}\n")
        for words, count, score in table.ranked():
            f.write(f"{' '.join(words)}\t{count}\t{score!r}\n")
    logger.info(f"Saved {len(table)} collocations to {path}")
    return path


def _parse_header(line: str, line_no: int, source: str, meta: dict) -> None:
    for field in line[1:].split():
        name, sep, value = field.partition("=")
        if not sep:
            continue
        try:
            if name == "N":
                meta["total_words"] = int(value)
            elif name == "min_pmi":
                meta["min_pmi"] = float(value)
            elif name == "min_count":
                meta["min_count"] = int(value)
        except ValueError:
            raise TableParseError(line_no, f"bad header value {field!r}", source)


def load_table(path: Union[str, Path]) -> ScoredTable:
    """Parse a table file written by ``save_table`` (gzip by extension)."""
    source = str(path)
    meta: dict = {"total_words": 0, "min_pmi": float("-inf"), "min_count": 1}
    scores: Dict[NgramKey, float] = {}
    counts: Dict[NgramKey, int] = {}

    for line_no, line in iter_lines(path):
        if not line.strip():
            continue
        if line.startswith("#"):
            _parse_header(line, line_no, source, meta)
            continue

        fields = line.split("\t")
        if len(fields) != 3:
            raise TableParseError(line_no, f"expected 3 tab-separated fields, got {len(fields)}", source)
        words = tuple(fields[0].split(" "))
        if len(words) not in (2, 3) or not all(words):
            raise TableParseError(line_no, f"expected 2 or 3 words, got {fields[0]!r}", source)
        try:
            count = int(fields[1])
            score = float(fields[2])
        except ValueError:
            raise TableParseError(line_no, "non-numeric count or score", source)
        if count < 0 or not math.isfinite(score):
            raise TableParseError(line_no, "count must be non-negative and score finite", source)
        if score < meta["min_pmi"]:
            raise TableParseError(line_no, f"score {score!r} below declared min_pmi", source)
        if words in scores:
            raise TableParseError(line_no, f"duplicate n-gram {fields[0]!r}", source)
        scores[words] = score
        counts[words] = count

    return ScoredTable(scores, counts, meta["min_pmi"], meta["min_count"], meta["total_words"])
