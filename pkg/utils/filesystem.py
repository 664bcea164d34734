"""Filesystem utilities: gzip-aware line reading and content hashing."""

import gzip
import hashlib
from pathlib import Path
from typing import BinaryIO, Iterator, Tuple, Union

from utils.errors import TextDecodeError


def open_binary(path: Union[str, Path]) -> BinaryIO:
    """Open ``path`` for binary reading, decompressing ``.gz`` transparently."""
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def iter_lines(path: Union[str, Path]) -> Iterator[Tuple[int, str]]:
    """
    Yield ``(line_no, text)`` pairs (1-based, trailing newline stripped).

    Decoding is strict UTF-8; a bad byte raises ``TextDecodeError`` carrying
    its offset in the (decompressed) stream.
    """
    offset = 0
    with open_binary(path) as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise TextDecodeError(offset + e.start, e.reason, source=f"{path}:{line_no}") from e
            offset += len(raw)
            yield line_no, text.rstrip("\r\n")


def sha256_file(path: Union[str, Path], chunk_size: int = 1 << 20) -> str:
    """Hex SHA-256 of a file's raw bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def ensure_directory_exists(directory: Path) -> None:
    """Ensure directory exists, create if it doesn't."""
    directory.mkdir(parents=True, exist_ok=True)
