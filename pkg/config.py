"""Configuration for collodp."""

import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from utils.errors import InvalidConfigError

# Load .env file if present
load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent

# Shipped connector-word list (versioned alongside the code)
DEFAULT_STOPWORDS = PROJECT_ROOT / "data" / "stopwords.txt"

# Binary cache for parsed embedding models (keyed by source hash); off unless COLLODP_CACHE_DIR is set
DEFAULT_CACHE_DIR: Optional[Path] = None


class Settings(BaseModel):
    """Effective settings: env defaults, overridden by YAML, then by flags."""

    threads: int = Field(default=1, ge=1)
    stopwords: Path = DEFAULT_STOPWORDS
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    min_pmi: float = 2.0
    min_count: int = Field(default=5, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    cache_dir: Optional[Path] = DEFAULT_CACHE_DIR

    # Resources for the HTTP service
    bigrams: Optional[Path] = None
    trigrams: Optional[Path] = None
    model: Optional[Path] = None
    word_model: Optional[Path] = None


def _env_defaults() -> Dict[str, Any]:
    """Read COLLODP_* variables at call time (tests may patch the env)."""
    mapping = {
        "threads": "COLLODP_THREADS",
        "stopwords": "COLLODP_STOPWORDS",
        "log_level": "COLLODP_LOG_LEVEL",
        "min_pmi": "COLLODP_MIN_PMI",
        "min_count": "COLLODP_MIN_COUNT",
        "seed": "COLLODP_SEED",
        "cache_dir": "COLLODP_CACHE_DIR",
        "bigrams": "COLLODP_BIGRAMS",
        "trigrams": "COLLODP_TRIGRAMS",
        "model": "COLLODP_MODEL",
        "word_model": "COLLODP_WORD_MODEL",
    }
    values: Dict[str, Any] = {"threads": os.cpu_count() or 1}
    for key, var in mapping.items():
        raw = os.getenv(var)
        if raw not in (None, ""):
            values[key] = raw
    return values


def load_settings(
    path: Optional[Union[str, Path]] = None,
    **overrides: Any,
) -> Settings:
    """
    Build Settings from the environment, an optional YAML file and explicit
    overrides (``None`` overrides are ignored so unset CLI flags fall through).
    """
    values = _env_defaults()

    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise InvalidConfigError(f"Cannot read config file {path}: {e}", {"path": str(path)})
        if not isinstance(loaded, dict):
            raise InvalidConfigError(f"Config file {path} must contain a mapping", {"path": str(path)})
        values.update({k.replace("-", "_"): v for k, v in loaded.items()})

    values.update({k: v for k, v in overrides.items() if v is not None})

    try:
        return Settings(**values)
    except ValidationError as e:
        raise InvalidConfigError(f"Invalid settings: {e}", {"errors": [err["msg"] for err in e.errors()]})
