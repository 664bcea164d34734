"""Joint unigram/collocation embedding space: loading, metric, nearest neighbors."""

import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from models.schemas import NeighborResult
from utils.atomic_write import atomic_writer, replace_with_retries
from utils.errors import (
    DimensionMismatchError,
    EmptyVocabularyError,
    ModelParseError,
    OutOfVocabularyError,
)
from utils.filesystem import ensure_directory_exists, iter_lines, sha256_file

logger = logging.getLogger(__name__)

# Relative/absolute slack on the norm lower bound, covering float rounding
_PRUNE_RTOL = 1e-9
_PRUNE_ATOL = 1e-12

# Rows per thread when scanning in parallel
_MIN_CHUNK_ROWS = 4096


@dataclass(frozen=True)
class CovarianceSummary:
    """Embedding covariance and the square root of its lambda-regularization."""

    lam: float
    sigma: np.ndarray
    sigma_normalized: np.ndarray
    regularized_root: np.ndarray


class EmbeddingModel:
    """
    Immutable vocabulary + |V| x d float64 matrix.

    Rows must be finite and surfaces unique; multiword tokens join their
    words with underscores.
    """

    def __init__(self, vocab: Sequence[str], matrix: np.ndarray):
        matrix = np.array(matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise ValueError(f"matrix must be 2-D with at least one column, got shape {matrix.shape}")
        if matrix.shape[0] != len(vocab):
            raise ValueError(f"{len(vocab)} tokens but {matrix.shape[0]} rows")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("matrix contains NaN or Inf")
        index: Dict[str, int] = {}
        for i, token in enumerate(vocab):
            if token in index:
                raise ValueError(f"duplicate token {token!r}")
            index[token] = i

        matrix.setflags(write=False)
        self.vocab: Tuple[str, ...] = tuple(vocab)
        self.index = index
        self.matrix = matrix
        self._norms: Optional[np.ndarray] = None
        self._covariances: Dict[float, CovarianceSummary] = {}
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def __contains__(self, token: object) -> bool:
        return token in self.index

    def __repr__(self) -> str:
        return f"EmbeddingModel(size={len(self)}, dim={self.dim})"

    def row(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise OutOfVocabularyError(token) from None

    def vector(self, token: str) -> np.ndarray:
        return self.matrix[self.row(token)]

    @property
    def norms(self) -> np.ndarray:
        if self._norms is None:
            norms = _row_distances(self.matrix, np.zeros(self.dim))
            norms.setflags(write=False)
            self._norms = norms
        return self._norms


def _row_distances(rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    # Same per-row expression everywhere so chunked and pruned scans agree bitwise
    return np.sqrt(np.sum((rows - query) ** 2, axis=1))


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _parse_header(line: str, source: str) -> Tuple[int, int]:
    parts = line.split()
    if len(parts) != 2:
        raise ModelParseError(1, "header must be '<vocab_size> <dim>'", source)
    try:
        size, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise ModelParseError(1, "non-integer header field", source)
    if size < 0 or dim < 1:
        raise ModelParseError(1, f"invalid header sizes {size} x {dim}", source)
    return size, dim


def _parse_word2vec_text(path: Union[str, Path]) -> EmbeddingModel:
    source = str(path)
    lines = iter_lines(path)
    try:
        _, header = next(lines)
    except StopIteration:
        raise ModelParseError(1, "empty file", source)
    size, dim = _parse_header(header, source)

    vocab: List[str] = []
    seen: Set[str] = set()
    matrix = np.empty((size, dim), dtype=np.float64)
    last_line = 1
    for line_no, line in lines:
        if not line.strip():
            continue
        last_line = line_no
        parts = line.split()
        if len(parts) != dim + 1:
            raise ModelParseError(line_no, f"expected {dim} values, got {len(parts) - 1}", source)
        token = parts[0]
        if token in seen:
            raise ModelParseError(line_no, f"duplicate token {token!r}", source)
        if len(vocab) == size:
            raise ModelParseError(line_no, f"more rows than the declared {size}", source)
        try:
            row = np.array(parts[1:], dtype=np.float64)
        except ValueError:
            raise ModelParseError(line_no, "non-numeric vector field", source)
        if not np.all(np.isfinite(row)):
            raise ModelParseError(line_no, "non-finite vector field", source)
        matrix[len(vocab)] = row
        vocab.append(token)
        seen.add(token)

    if len(vocab) != size:
        raise ModelParseError(last_line, f"declared {size} rows, found {len(vocab)}", source)
    return EmbeddingModel(vocab, matrix)


def _load_cached(cache_file: Path) -> Optional[EmbeddingModel]:
    try:
        with np.load(cache_file, allow_pickle=False) as data:
            return EmbeddingModel([str(t) for t in data["vocab"]], data["matrix"])
    except (OSError, KeyError, ValueError) as e:
        logger.warning(f"Ignoring unreadable model cache {cache_file}: {e}")
        return None


def _store_cached(model: EmbeddingModel, cache_file: Path) -> None:
    ensure_directory_exists(cache_file.parent)
    tmp = cache_file.with_name(f"{cache_file.stem}.tmp.{uuid.uuid4().hex}.npz")
    try:
        np.savez(tmp, vocab=np.array(model.vocab, dtype=str), matrix=model.matrix)
        replace_with_retries(tmp, cache_file)
    except OSError as e:
        logger.warning(f"Could not write model cache {cache_file}: {e}")
        tmp.unlink(missing_ok=True)


def load_model(
    path: Union[str, Path],
    cache_dir: Optional[Union[str, Path]] = None,
) -> EmbeddingModel:
    """
    Load a word2vec text file (``.gz`` accepted).

    With ``cache_dir``, a binary copy keyed by the file's SHA-256 is reused
    on later loads; editing the source invalidates it.
    """
    path = Path(path)
    cache_file = None
    if cache_dir is not None:
        cache_file = Path(cache_dir) / f"{sha256_file(path)}.npz"
        if cache_file.exists():
            model = _load_cached(cache_file)
            if model is not None:
                logger.info(f"Loaded {model!r} from cache {cache_file}")
                return model

    model = _parse_word2vec_text(path)
    logger.info(f"Loaded {model!r} from {path}")
    if cache_file is not None:
        _store_cached(model, cache_file)
    return model


def save_model(model: EmbeddingModel, path: Union[str, Path]) -> Path:
    """Write word2vec text format with round-trip float repr."""
    path = Path(path)
    with atomic_writer(path) as f:
        f.write(f"{len(model)} {model.dim}\n")
        for token, row in zip(model.vocab, model.matrix):
            f.write(token + " " + " ".join(repr(x) for x in row.tolist()) + "\n")
    logger.info(f"Saved {model!r} to {path}")
    return path


# ---------------------------------------------------------------------------
# Metric and search
# ---------------------------------------------------------------------------


def distance(model: EmbeddingModel, w: str, w2: str) -> float:
    """Euclidean distance between two token embeddings."""
    return float(np.linalg.norm(model.vector(w) - model.vector(w2)))


def _check_query(model: EmbeddingModel, query) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != model.dim:
        raise DimensionMismatchError(model.dim, query.shape[-1] if query.ndim else 0)
    return query


def _scan(matrix: np.ndarray, query: np.ndarray, workers: int) -> np.ndarray:
    n = matrix.shape[0]
    if workers <= 1 or n < 2 * _MIN_CHUNK_ROWS:
        return _row_distances(matrix, query)
    bounds = np.linspace(0, n, num=min(workers, n // _MIN_CHUNK_ROWS) + 1, dtype=int)
    chunks = [matrix[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        parts = list(executor.map(lambda rows: _row_distances(rows, query), chunks))
    return np.concatenate(parts)


def _select(indices: np.ndarray, dists: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """k smallest distances, ties resolved by lower row index."""
    if k < len(dists):
        kth = np.partition(dists, k - 1)[k - 1]
        keep = dists <= kth
        indices, dists = indices[keep], dists[keep]
    order = np.lexsort((indices, dists))[:k]
    return indices[order], dists[order]


def nearest(
    model: EmbeddingModel,
    query,
    k: int = 1,
    prune: bool = False,
    workers: int = 1,
) -> List[NeighborResult]:
    """
    Exact k nearest tokens to ``query``, ascending by Euclidean distance.

    ``prune`` skips rows whose norm gap | |u| - |q| | already exceeds the
    k-th best distance; ``workers`` splits the scan across threads. Both
    return exactly the full-scan result.
    """
    query = _check_query(model, query)
    n = len(model)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    if prune and k < n:
        lower = np.abs(model.norms - float(np.linalg.norm(query)))
        seed_rows = np.argpartition(lower, k - 1)[:k]
        tau = float(_row_distances(model.matrix[seed_rows], query).max())
        candidates = np.flatnonzero(lower <= tau * (1.0 + _PRUNE_RTOL) + _PRUNE_ATOL)
        candidates = np.union1d(candidates, seed_rows)
        dists = _scan(model.matrix[candidates], query, workers)
        indices = candidates
    else:
        dists = _scan(model.matrix, query, workers)
        indices = np.arange(n)

    rows, dists = _select(indices, dists, k)
    return [
        NeighborResult(token=model.vocab[i], distance=float(d), index=int(i))
        for i, d in zip(rows.tolist(), dists.tolist())
    ]


def nearest_batch(
    model: EmbeddingModel,
    points: np.ndarray,
    k: int = 1,
    batch_size: int = 8192,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row indices and distances of the k nearest tokens for each point.

    Intended for small vocabularies (Monte-Carlo checks); ties go to the
    lower row index like ``nearest``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != model.dim:
        raise DimensionMismatchError(model.dim, points.shape[1])
    if not 1 <= k <= len(model):
        raise ValueError(f"k must be in [1, {len(model)}], got {k}")

    all_rows, all_dists = [], []
    for lo in range(0, points.shape[0], batch_size):
        block = points[lo:lo + batch_size]
        dists = np.sqrt(np.sum((block[:, None, :] - model.matrix[None, :, :]) ** 2, axis=2))
        order = np.argsort(dists, axis=1, kind="stable")[:, :k]
        all_rows.append(order)
        all_dists.append(np.take_along_axis(dists, order, axis=1))
    if not all_rows:
        return np.empty((0, k), dtype=int), np.empty((0, k))
    return np.concatenate(all_rows), np.concatenate(all_dists)


# ---------------------------------------------------------------------------
# Covariance (Mahalanobis noise shaping)
# ---------------------------------------------------------------------------


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(matrix)
    eigvals = np.clip(eigvals, 0.0, None)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return (root + root.T) / 2.0


def covariance(model: EmbeddingModel, lam: float = 0.2) -> CovarianceSummary:
    """
    Sample covariance of the rows (divisor |V| - 1) and the symmetric square
    root of ``lam * S + (1 - lam) * I``, where S is the covariance scaled to
    unit mean diagonal. Cached per model and lambda.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    if len(model) < 2:
        raise ValueError("covariance needs at least two tokens")

    with model._lock:
        cached = model._covariances.get(lam)
        if cached is not None:
            return cached

        sigma = np.cov(model.matrix, rowvar=False, ddof=1).reshape(model.dim, model.dim)
        sigma = (sigma + sigma.T) / 2.0
        scale = float(np.mean(np.diag(sigma)))
        normalized = sigma / scale if scale > 0 else np.zeros_like(sigma)
        if lam == 0.0:
            root = np.eye(model.dim)
        else:
            root = _psd_sqrt(lam * normalized + (1.0 - lam) * np.eye(model.dim))

        for array in (sigma, normalized, root):
            array.setflags(write=False)
        summary = CovarianceSummary(lam=lam, sigma=sigma, sigma_normalized=normalized, regularized_root=root)
        model._covariances[lam] = summary
        logger.debug(f"Computed covariance root for {model!r} at lambda={lam}")
        return summary


# ---------------------------------------------------------------------------
# Vocabulary utilities
# ---------------------------------------------------------------------------


def filter_vocab(model: EmbeddingModel, allowed: Iterable[str]) -> EmbeddingModel:
    """Keep the tokens whose every underscore-separated word is allowed."""
    allowed = set(allowed)
    keep = [i for i, token in enumerate(model.vocab) if all(w in allowed for w in token.split("_"))]
    if not keep:
        raise EmptyVocabularyError(
            "No model token has all of its words in the allowed vocabulary",
            {"model_size": len(model), "allowed_size": len(allowed)},
        )
    if len(keep) == len(model):
        return model
    logger.info(f"Filtered vocabulary from {len(model)} to {len(keep)} tokens")
    return EmbeddingModel([model.vocab[i] for i in keep], model.matrix[keep])


def vocab_words(model: EmbeddingModel) -> Set[str]:
    """Constituent words of all model tokens."""
    return {w for token in model.vocab for w in token.split("_")}



def normalize_rows(model: EmbeddingModel) -> EmbeddingModel:
    """Rows scaled to unit norm (zero rows stay zero)."""
    norms = model.norms
    safe = np.where(norms > 0, norms, 1.0)
    return EmbeddingModel(model.vocab, model.matrix / safe[:, None])


def synth_model(vocab: Sequence[str], dim: int, seed: int = 0) -> EmbeddingModel:
    """Model with i.i.d. standard normal rows, deterministic in ``seed``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    return EmbeddingModel(list(vocab), rng.standard_normal((len(vocab), dim)))

