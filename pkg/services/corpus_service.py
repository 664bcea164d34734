"""Corpus ingestion: normalization, sentence splitting, word tokenization."""

import json
import logging
import unicodedata
from functools import lru_cache
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Set, Union

import regex

from config import DEFAULT_STOPWORDS
from models.schemas import ConnectorList, Document, Sentence
from utils.errors import DatasetParseError, TextDecodeError
from utils.filesystem import iter_lines

logger = logging.getLogger(__name__)

# Control and format characters, except whitespace controls (tab, newline, ...)
_CONTROL_RE = regex.compile(r"[[\p{Cc}\p{Cf}]--[\s]]", regex.V1)

# Alphanumeric runs; apostrophes and hyphens only between alphanumerics
_WORD_RE = regex.compile(
    r"[\p{L}\p{N}][\p{L}\p{M}\p{N}]*(?:['’\-][\p{L}\p{N}][\p{L}\p{M}\p{N}]*)*"
)

_SENTENCE_BOUNDARY_RE = regex.compile(r"(?<=[.!?])\s+")

DocumentFormat = Literal["auto", "text", "jsonl"]


def normalize(text: Union[str, bytes]) -> str:
    """
    Lowercase, NFC-compose and strip control characters.

    ``bytes`` input is decoded as strict UTF-8; a ``str`` holding lone
    surrogates is rejected the same way. Idempotent.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as e:
            raise TextDecodeError(e.start, e.reason) from e
    else:
        try:
            text.encode("utf-8")
        except UnicodeEncodeError as e:
            raise TextDecodeError(len(text[: e.start].encode("utf-8", "surrogatepass")), e.reason) from e

    if not text:
        return ""
    text = _CONTROL_RE.sub("", text)
    text = unicodedata.normalize("NFC", text).lower()
    return unicodedata.normalize("NFC", text)


def word_tokenize(text: str) -> List[str]:
    """Words of normalized text; punctuation is dropped."""
    return _WORD_RE.findall(text)


def split_sentences(text: str) -> List[Sentence]:
    """
    Split normalized text after '.', '!' or '?' followed by whitespace.

    Sentences without any word are dropped; word offsets are document-wide,
    so flattening the result reproduces ``word_tokenize(text)``.
    """
    sentences: List[Sentence] = []
    position = 0
    for chunk in _SENTENCE_BOUNDARY_RE.split(text):
        words = word_tokenize(chunk)
        if not words:
            continue
        sentences.append(Sentence(words=words, start=position, end=position + len(words)))
        position += len(words)
    return sentences


def sentenceize(text: Union[str, bytes]) -> List[Sentence]:
    """Normalize raw text and split it into sentences."""
    return split_sentences(normalize(text))


def load_connectors(path: Optional[Union[str, Path]] = None) -> ConnectorList:
    """
    Load a connector-word file (one word per line, ``#`` comments).

    Entries are normalized so lookups match normalized document words.
    """
    path = Path(path) if path is not None else DEFAULT_STOPWORDS
    words = []
    for _, line in iter_lines(path):
        entry = line.strip()
        if not entry or entry.startswith("#"):
            continue
        words.append(normalize(entry))
    connectors = ConnectorList(words=words)
    logger.info(f"Loaded {len(connectors)} connector words from {path}")
    return connectors


@lru_cache(maxsize=1)
def default_connectors() -> ConnectorList:
    """The shipped connector list, loaded once."""
    return load_connectors(DEFAULT_STOPWORDS)


def is_connector(word: str, connectors: Optional[ConnectorList] = None) -> bool:
    """True iff ``word`` is a connector word (case-insensitive)."""
    if connectors is None:
        connectors = default_connectors()
    return word in connectors


def _detect_format(path: Path) -> str:
    suffixes = [s.lower() for s in path.suffixes]
    if suffixes and suffixes[-1] == ".gz":
        suffixes = suffixes[:-1]
    return "jsonl" if suffixes and suffixes[-1] == ".jsonl" else "text"


def read_documents(
    path: Union[str, Path],
    fmt: DocumentFormat = "auto",
    field: str = "text",
    id_field: str = "id",
) -> Iterator[Document]:
    """
    Stream documents from plain text (one per non-empty line) or JSONL.

    Document ids default to the 1-based line number and must be unique:
    a repeated id raises ``DatasetParseError``. ``.gz`` input is
    decompressed transparently.
    """
    path = Path(path)
    if fmt == "auto":
        fmt = _detect_format(path)

    seen: Set[str] = set()
    for line_no, line in iter_lines(path):
        if not line.strip():
            continue
        if fmt == "text":
            yield Document(id=str(line_no), text=line)
            continue

        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetParseError(line_no, f"invalid JSON: {e.msg}", str(path)) from e
        if not isinstance(record, dict):
            raise DatasetParseError(line_no, "record is not a JSON object", str(path))
        text = record.get(field)
        if not isinstance(text, str):
            raise DatasetParseError(line_no, f"missing text field {field!r}", str(path))
        doc_id = record.get(id_field)
        doc_id = str(doc_id) if doc_id is not None else str(line_no)
        if doc_id in seen:
            raise DatasetParseError(line_no, f"duplicate document id {doc_id!r}", str(path))
        seen.add(doc_id)
        yield Document(id=doc_id, text=text)
