"""Atomic file operations with retry on transient file locks."""

import gzip
import io
import logging
import os
import uuid
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, TextIO, Union

from tenacity import retry, retry_if_exception, stop_after_attempt, wait_exponential

logger = logging.getLogger(__name__)

# Windows error codes for file locks
LOCK_ERRNOS = {32, 5}  # WinError 32 (in use), 5 (access denied)


def _is_lock_error(e: BaseException) -> bool:
    """Check if exception is a (Windows) file lock error."""
    return isinstance(e, OSError) and getattr(e, "winerror", None) in LOCK_ERRNOS


@retry(
    stop=stop_after_attempt(8),
    wait=wait_exponential(multiplier=0.15, max=5),
    retry=retry_if_exception(_is_lock_error),
    reraise=True,
)
def replace_with_retries(src: Path, dst: Path) -> None:
    """``os.replace`` that backs off while the destination is locked."""
    os.replace(src, dst)


class _GzipTextSink:
    """Text sink writing deterministic gzip (mtime=0) to a raw file."""

    def __init__(self, raw):
        self._raw = raw
        self._text = io.TextIOWrapper(
            gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0),
            encoding="utf-8",
            newline="\n",
        )

    def write(self, s: str) -> int:
        return self._text.write(s)

    def close(self) -> None:
        self._text.close()  # writes the gzip trailer, leaves raw open
        self._raw.flush()
        os.fsync(self._raw.fileno())
        self._raw.close()


@contextmanager
def atomic_writer(path: Union[str, Path]) -> Iterator[TextIO]:
    """
    Open a temp file next to ``path`` for text writing, then atomically
    replace the target on success.

    A ``.gz`` suffix on ``path`` produces gzip output. The target is either
    fully written or left untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f"{path.name}.tmp.{uuid.uuid4().hex}")

    try:
        if path.suffix == ".gz":
            sink = _GzipTextSink(open(tmp, "wb"))
            try:
                yield sink
            finally:
                sink.close()
        else:
            with open(tmp, "w", encoding="utf-8", newline="\n") as f:
                yield f
                f.flush()
                os.fsync(f.fileno())  # Ensure data is written to disk
        replace_with_retries(tmp, path)
    except BaseException:
        # Clean up temp file on error
        if tmp.exists():
            try:
                tmp.unlink()
            except OSError:
                pass
        raise


def atomic_write_text(path: Union[str, Path], content: str) -> Path:
    """
    Atomically write text content to a file.

    Writes to a temp file, fsyncs, then atomically replaces the target.
    This ensures the file is either fully written or not present (no partial files).
    """
    path = Path(path)
    with atomic_writer(path) as f:
        f.write(content)
    logger.debug(f"Wrote {len(content)} characters to {path}")
    return path
