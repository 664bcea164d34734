"""Logging setup with a per-document / per-request context id."""

import logging
from contextvars import ContextVar

# Document id (pipeline) or request id (HTTP service) of the current unit of work
doc_id_var: ContextVar[str] = ContextVar("doc_id", default="-")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(doc_id)s] - %(message)s"


class DocumentIDFormatter(logging.Formatter):
    """Log formatter that includes the current document id."""

    def format(self, record):
        record.doc_id = doc_id_var.get()
        return super().format(record)


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging once; later calls only adjust the level."""
    root = logging.getLogger()
    if not any(isinstance(h.formatter, DocumentIDFormatter) for h in root.handlers):
        logging.basicConfig(level=level, handlers=[logging.StreamHandler()])
        for handler in root.handlers:
            handler.setFormatter(DocumentIDFormatter(LOG_FORMAT))
    root.setLevel(level)
