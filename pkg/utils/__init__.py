"""Utility functions for collodp."""

from .atomic_write import atomic_write_text, atomic_writer, replace_with_retries
from .filesystem import ensure_directory_exists, iter_lines, open_binary, sha256_file
from .log_context import configure_logging, doc_id_var

__all__ = [
    "atomic_write_text",
    "atomic_writer",
    "replace_with_retries",
    "ensure_directory_exists",
    "iter_lines",
    "open_binary",
    "sha256_file",
    "configure_logging",
    "doc_id_var",
]
