"""Shared fixtures: toy embedding models, collocation tables and file helpers."""

from pathlib import Path

import numpy as np
import pytest

from models.schemas import ConnectorList, MechanismConfig
from services.collocation_service import ScoredTable
from services.embedding_service import EmbeddingModel, save_model, synth_model

SAMPLE_TEXT = "quick brown fox jumps lazy dogs sleep deep river banks"

SAMPLE_WORDS = SAMPLE_TEXT.split()

SAMPLE_COLLOCATIONS = ["quick_brown_fox", "jumps_lazy", "dogs_sleep"]


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    """Keep model caches and settings out of the working tree."""
    monkeypatch.setenv("COLLODP_CACHE_DIR", str(tmp_path / "cache"))
    monkeypatch.setenv("COLLODP_THREADS", "1")
    for var in ("COLLODP_BIGRAMS", "COLLODP_TRIGRAMS", "COLLODP_MODEL", "COLLODP_WORD_MODEL", "COLLODP_SEED"):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture
def fixture_model() -> EmbeddingModel:
    """Three tokens at (0,0), (1,0), (0,1)."""
    return EmbeddingModel(["a", "b", "c"], np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))


@pytest.fixture
def toy_model() -> EmbeddingModel:
    """Five tokens in 2-D, pairwise distances >= 1."""
    return EmbeddingModel(
        ["a", "b", "c", "d", "e"],
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 0.0]]),
    )


@pytest.fixture
def sample_tables():
    """One trigram and two bigrams covering the first seven words of SAMPLE_TEXT."""
    bigrams = ScoredTable(
        {("jumps", "lazy"): 4.0, ("dogs", "sleep"): 3.5},
        {("jumps", "lazy"): 12, ("dogs", "sleep"): 9},
        min_pmi=2.0,
    )
    trigrams = ScoredTable(
        {("quick", "brown", "fox"): 6.0},
        {("quick", "brown", "fox"): 7},
        min_pmi=2.0,
    )
    return bigrams, trigrams


@pytest.fixture
def word_model() -> EmbeddingModel:
    return synth_model(SAMPLE_WORDS, dim=8, seed=1)


@pytest.fixture
def coll_model() -> EmbeddingModel:
    """Unigrams of SAMPLE_TEXT plus its collocations and a few extra multiword tokens."""
    vocab = SAMPLE_WORDS + SAMPLE_COLLOCATIONS + ["quick_brown", "river_banks", "deep_river_banks"]
    return synth_model(vocab, dim=8, seed=2)


@pytest.fixture
def no_connectors() -> ConnectorList:
    return ConnectorList()


@pytest.fixture
def madlib_config() -> MechanismConfig:
    return MechanismConfig(kind="madlib", epsilon=1.0, seed=7)


@pytest.fixture
def write_text(tmp_path):
    """Write ``content`` under tmp_path and return the path."""

    def _write(name: str, content: str) -> Path:
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def model_file(tmp_path):
    """Save a model in word2vec text format and return the path."""

    def _save(model: EmbeddingModel, name: str = "model.vec") -> Path:
        return save_model(model, tmp_path / name)

    return _save
