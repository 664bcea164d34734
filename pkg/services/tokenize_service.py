"""Collocation-level tokenization: greedy sequential (GST) and max score (MST)."""

import logging
from typing import Callable, Dict, List, Optional

from models.schemas import Algorithm, CollToken, Sentence, Tokenization
from services.collocation_service import ScoredTable
from services.corpus_service import sentenceize

logger = logging.getLogger(__name__)

_EMPTY = ScoredTable({})


def _token(words: List[str], start: int, length: int, score: float) -> CollToken:
    return CollToken(
        surface="_".join(words[start:start + length]),
        word_len=length,
        start=start,
        end=start + length,
        score=score,
    )


def gst(
    sentence: Sentence,
    bigrams: Optional[ScoredTable] = None,
    trigrams: Optional[ScoredTable] = None,
) -> Tokenization:
    """
    Greedy sequential tokenization.

    Scanning left to right, the trigram starting at the current position
    wins over the bigram, which wins over the unigram, regardless of score.
    Every occurrence of a collocation is matched.
    """
    bigrams = bigrams if bigrams is not None else _EMPTY
    trigrams = trigrams if trigrams is not None else _EMPTY
    words = sentence.words
    tokens: List[CollToken] = []
    i = 0
    while i < len(words):
        token = None
        for length, table in ((3, trigrams), (2, bigrams)):
            if i + length <= len(words):
                score = table.get(tuple(words[i:i + length]))
                if score is not None:
                    token = _token(words, i, length, score)
                    break
        if token is None:
            token = _token(words, i, 1, 0.0)
        tokens.append(token)
        i = token.end
    return Tokenization(tokens=tokens, source=sentence)


def mst(
    sentence: Sentence,
    bigrams: Optional[ScoredTable] = None,
    trigrams: Optional[ScoredTable] = None,
) -> Tokenization:
    """
    Max score tokenization (greedy by score, not a global optimum).

    All unigram (score 0) and table-matched bi/trigram occurrences compete;
    higher scores are accepted first as long as their word positions are
    still uncovered. Ties: earlier start, then longer, then surface.
    """
    bigrams = bigrams if bigrams is not None else _EMPTY
    trigrams = trigrams if trigrams is not None else _EMPTY
    words = sentence.words

    candidates: List[CollToken] = []
    for i in range(len(words)):
        candidates.append(_token(words, i, 1, 0.0))
        for length, table in ((2, bigrams), (3, trigrams)):
            if i + length <= len(words):
                score = table.get(tuple(words[i:i + length]))
                if score is not None:
                    candidates.append(_token(words, i, length, score))
    candidates.sort(key=lambda t: (-t.score, t.start, -t.word_len, t.surface))

    covered = [False] * len(words)
    accepted: List[CollToken] = []
    for candidate in candidates:
        if any(covered[candidate.start:candidate.end]):
            continue
        covered[candidate.start:candidate.end] = [True] * candidate.word_len
        accepted.append(candidate)
    accepted.sort(key=lambda t: t.start)
    return Tokenization(tokens=accepted, source=sentence)


def total_score(tokenization: Tokenization) -> float:
    return float(sum(t.score for t in tokenization.tokens))


TOKENIZERS: Dict[str, Callable[..., Tokenization]] = {"gst": gst, "mst": mst}


def tokenize_text(
    text: str,
    bigrams: Optional[ScoredTable] = None,
    trigrams: Optional[ScoredTable] = None,
    algorithm: Algorithm = "gst",
) -> List[Tokenization]:
    """Sentenceize raw text and tokenize each sentence."""
    tokenizer = TOKENIZERS[algorithm]
    return [tokenizer(s, bigrams, trigrams) for s in sentenceize(text)]


def export_line(tokenization: Tokenization) -> str:
    """Space-separated surfaces: the trainer-corpus line of one sentence."""
    return " ".join(tokenization.surfaces)

