"""Tests for budget scaling, strategies S1-S4 and dataset privatization."""

import io
import json
import math
import random

import numpy as np
import pytest

from conftest import SAMPLE_TEXT, SAMPLE_WORDS
from models.schemas import ConnectorList, Document, MechanismConfig, PrivatizedRecord
from services import pipeline_service
from services.collocation_service import ScoredTable
from services.corpus_service import sentenceize
from services.embedding_service import synth_model
from services.eval_service import evaluate
from services.pipeline_service import (
    StrategyConfig,
    build_strategy_config,
    composition_log,
    compute_avg_words,
    doc_budget,
    plan,
    privatize_dataset,
    privatize_document,
    record_summary,
)
from utils.errors import DatasetParseError, DegeneratePlanError, InvalidConfigError, TextDecodeError
from utils.log_context import doc_id_var


@pytest.fixture
def configs(sample_tables, word_model, coll_model, no_connectors):
    """StrategyConfig factory over the shared fixture resources."""
    bigrams, trigrams = sample_tables

    def _make(strategy="S3", base_epsilon=1.0, **overrides):
        values = dict(
            strategy=strategy,
            base_epsilon=base_epsilon,
            connectors=no_connectors,
            bigrams=bigrams,
            trigrams=trigrams,
            word_model=word_model,
            coll_model=coll_model,
            mechanism=MechanismConfig(seed=42),
        )
        values.update(overrides)
        return StrategyConfig(**values)

    return _make


def test_doc_budget_examples():
    assert doc_budget(0.1, 7.80) == pytest.approx(0.78)
    assert doc_budget(50, 44.48) == pytest.approx(2224.12, rel=1e-3)
    assert doc_budget(3.5, 1.0) == 3.5
    with pytest.raises(ValueError):
        doc_budget(0.0, 10.0)
    with pytest.raises(ValueError):
        doc_budget(1.0, -1.0)


def test_figure_one_budgets(configs):
    sentences = sentenceize(SAMPLE_TEXT)

    s1 = plan(sentences, configs("S1"), 10)
    assert s1.doc_epsilon == 10
    assert len(s1.tokens) == 10
    assert s1.per_token_epsilon == [1.0] * 10

    s2 = plan(sentences, configs("S2"), 10)
    assert [t.surface for t in s2.tokens] == [
        "quick_brown_fox", "jumps_lazy", "dogs_sleep", "deep", "river", "banks",
    ]
    assert s2.per_token_epsilon == [1.0] * 6
    assert s2.total_spent == 6.0

    s3 = plan(sentences, configs("S3"), 10)
    assert s3.per_token_epsilon == pytest.approx([10 / 6] * 6)
    assert s3.total_spent == pytest.approx(10.0)


def test_s4_uses_max_score_tokens(configs):
    cfg = configs(
        "S4",
        bigrams=ScoredTable({("quick", "brown"): 9.0}),
        trigrams=ScoredTable({("quick", "brown", "fox"): 6.0}),
    )
    p = plan(sentenceize("quick brown fox"), cfg, 3)
    assert [t.surface for t in p.tokens] == ["quick_brown", "fox"]
    assert p.per_token_epsilon == [1.5, 1.5]
    s3 = plan(sentenceize("quick brown fox"), configs("S3", bigrams=cfg.bigrams, trigrams=cfg.trigrams), 3)
    assert [t.surface for t in s3.tokens] == ["quick_brown_fox"]


def test_s1_skips_connectors(configs):
    cfg = configs("S1", connectors=ConnectorList(words=["the", "a"]))
    p = plan(sentenceize("The fox saw a dog"), cfg, 5)
    assert p.skipped == [0, 3]
    assert p.per_token_epsilon == [None, 5 / 3, 5 / 3, None, 5 / 3]
    assert p.total_spent == pytest.approx(5.0)


def test_degenerate_plans(configs):
    cfg = configs("S1", connectors=ConnectorList(words=["the", "and", "of"]))
    with pytest.raises(DegeneratePlanError):
        plan(sentenceize("The and of."), cfg, 3)
    with pytest.raises(DegeneratePlanError):
        plan(sentenceize("?!"), configs("S3"), 3)


def test_s2_never_spends_more_than_s3(configs):
    rng = random.Random(8)
    s2_cfg, s3_cfg = configs("S2"), configs("S3")
    for _ in range(1000):
        words = [rng.choice(SAMPLE_WORDS) for _ in range(rng.randint(1, 25))]
        sentences = sentenceize(" ".join(words))
        avg = rng.uniform(1.0, 50.0)
        s2, s3 = plan(sentences, s2_cfg, avg), plan(sentences, s3_cfg, avg)
        assert s2.total_spent <= s3.total_spent + 1e-9
        assert s3.total_spent == pytest.approx(s3.doc_epsilon)
        assert s2.per_token_epsilon[0] <= s3.per_token_epsilon[0] + 1e-12


def test_strategy_config_requires_resources(sample_tables, coll_model):
    bigrams, trigrams = sample_tables
    with pytest.raises(InvalidConfigError):
        build_strategy_config(strategy="S1", base_epsilon=1.0, coll_model=coll_model)
    with pytest.raises(InvalidConfigError):
        build_strategy_config(strategy="S3", base_epsilon=1.0, coll_model=coll_model, bigrams=bigrams)
    with pytest.raises(InvalidConfigError):
        build_strategy_config(
            strategy="S3", base_epsilon=0.0, coll_model=coll_model, bigrams=bigrams, trigrams=trigrams,
        )
    cfg = build_strategy_config(
        strategy="S3", base_epsilon=1.0, coll_model=coll_model, bigrams=bigrams, trigrams=trigrams,
    )
    assert cfg.model is coll_model
    assert cfg.perturber is cfg.perturber


def test_compute_avg_words():
    docs = [Document(id="1", text="one two three"), Document(id="2", text="four!")]
    assert compute_avg_words(docs) == 2.0
    assert compute_avg_words([]) == 0.0


@pytest.mark.parametrize("strategy", ["S1", "S2", "S3", "S4"])
def test_huge_epsilon_reproduces_input(configs, strategy):
    record = privatize_document(Document(id="d", text=SAMPLE_TEXT), configs(strategy, base_epsilon=1e6))
    assert record.output_tokens == record.tokens
    assert record.privatized == " ".join(SAMPLE_WORDS)
    assert record.self_subs == len(record.tokens)
    assert len(record.output_tokens) == len(record.tokens)


def test_record_fields(configs):
    record = privatize_document(Document(id="d", text=SAMPLE_TEXT), configs("S3", base_epsilon=2.0), avg_words_per_text=10)
    assert record.epsilon_doc == 20.0
    assert record.epsilon_spent == pytest.approx(20.0)
    assert record.tokens == ["quick_brown_fox", "jumps_lazy", "dogs_sleep", "deep", "river", "banks"]
    assert record.per_token_epsilon == pytest.approx([20 / 6] * 6)
    assert record.strategy == "S3"
    assert record.mechanism == "madlib"
    assert len(record.privatized.split()) == sum(t.count("_") + 1 for t in record.output_tokens)


def test_privatize_document_is_deterministic(configs):
    doc = Document(id="same", text=SAMPLE_TEXT)
    cfg = configs("S3", base_epsilon=0.5)
    assert privatize_document(doc, cfg) == privatize_document(doc, cfg)


def test_privatize_document_resets_context(configs):
    privatize_document(Document(id="ctx", text=SAMPLE_TEXT), configs("S3"))
    assert doc_id_var.get() == "-"


def test_trigram_backoff_to_known_bigram(configs):
    vocab = list(SAMPLE_WORDS) + ["quick_brown", "jumps_lazy", "dogs_sleep"]
    cfg = configs("S3", base_epsilon=1e6, coll_model=synth_model(vocab, dim=8, seed=3))
    record = privatize_document(Document(id="d", text=SAMPLE_TEXT), cfg, avg_words_per_text=10)
    event = record.oov[0]
    assert (event.index, event.surface, event.action) == (0, "quick_brown_fox", "backoff")
    assert event.pieces == ["quick_brown", "fox"]
    assert record.output_tokens[0] == "quick_brown_fox"
    assert record.epsilon_spent == pytest.approx(record.epsilon_doc)


def test_backoff_budget_repeat(configs):
    vocab = list(SAMPLE_WORDS) + ["jumps_lazy", "dogs_sleep"]
    cfg = configs("S3", coll_model=synth_model(vocab, dim=8, seed=3), oov_budget="repeat")
    record = privatize_document(Document(id="d", text=SAMPLE_TEXT), cfg, avg_words_per_text=10)
    assert record.oov[0].pieces == ["quick", "brown", "fox"]
    per_token = 10 / 6
    assert record.epsilon_spent == pytest.approx(per_token * 8)


def test_unknown_word_is_copied(configs):
    cfg = configs("S1", word_model=synth_model([w for w in SAMPLE_WORDS if w != "fox"], dim=8, seed=1))
    record = privatize_document(Document(id="d", text=SAMPLE_TEXT), cfg, avg_words_per_text=10)
    assert [(e.surface, e.action) for e in record.oov] == [("fox", "copied")]
    assert record.output_tokens[2] == "fox"
    assert record.epsilon_spent == pytest.approx(9.0)
    summary = record_summary(record)
    assert summary.oov_copied == 1
    assert summary.perturbations == 9


def test_composition_log_sums_per_token_bounds(configs):
    record = privatize_document(Document(id="c", text=SAMPLE_TEXT), configs("S3", base_epsilon=0.3))
    log = composition_log(record, configs("S3").coll_model)
    assert len(log.entries) == len(record.tokens)
    assert log.log_bound == pytest.approx(math.fsum(e.epsilon * e.distance for e in log.entries))
    product = math.prod(math.exp(e.epsilon * e.distance) for e in log.entries)
    assert math.exp(log.log_bound) == pytest.approx(product)
    for e in log.entries:
        assert (e.distance == 0.0) == (e.input == e.output)


def test_output_length_varies(configs):
    cfg = configs("S3", base_epsilon=0.05)
    lengths = set()
    for i in range(200):
        record = privatize_document(Document(id=f"v{i}", text=SAMPLE_TEXT), cfg)
        lengths.add(len(record.privatized.split()))
    assert len(lengths) >= 2


def _write_dataset(cfg, docs, threads=1, avg=None):
    sink = io.StringIO()
    summary = privatize_dataset(docs, cfg, sink, avg, threads)
    return sink.getvalue(), summary


def _fixture_docs(n=100):
    rng = random.Random(0)
    return [
        Document(id=f"doc-{i}", text=". ".join(" ".join(rng.choice(SAMPLE_WORDS) for _ in range(rng.randint(2, 9))) for _ in range(2)))
        for i in range(n)
    ]


def test_dataset_output_is_deterministic_and_thread_invariant(configs):
    cfg = configs("S3", base_epsilon=1.0)
    docs = _fixture_docs()
    first, summary = _write_dataset(cfg, docs, threads=1)
    second, _ = _write_dataset(cfg, docs, threads=1)
    parallel, parallel_summary = _write_dataset(cfg, docs, threads=8)
    assert first == second == parallel
    assert len(first.splitlines()) == len(docs) == summary.records
    assert summary.model_dump(exclude={"elapsed_seconds"}) == parallel_summary.model_dump(exclude={"elapsed_seconds"})


def test_dataset_records_keep_input_order(configs):
    docs = _fixture_docs(20)
    output, summary = _write_dataset(configs("S2"), docs, threads=4)
    records = [json.loads(line) for line in output.splitlines()]
    assert [r["id"] for r in records] == [d.id for d in docs]
    assert summary.tokens == sum(len(r["tokens"]) for r in records)
    assert sum(summary.token_lengths.values()) == summary.tokens
    assert summary.avg_words_per_text == pytest.approx(compute_avg_words(docs))


def test_empty_dataset(configs):
    output, summary = _write_dataset(configs("S3"), [])
    assert output == ""
    assert summary.records == 0
    assert summary.self_sub_rate == 0.0


def test_dataset_rejects_repeated_ids_before_writing(configs):
    docs = [Document(id="x", text=SAMPLE_TEXT) for _ in range(5)]
    sink = io.StringIO()
    with pytest.raises(DatasetParseError) as excinfo:
        privatize_dataset(docs, configs("S3", base_epsilon=0.05), sink)
    assert excinfo.value.line_no == 2
    assert sink.getvalue() == ""


@pytest.mark.parametrize("avg", [0.0, -3.0])
def test_dataset_rejects_non_positive_average(configs, avg):
    sink = io.StringIO()
    with pytest.raises(InvalidConfigError) as excinfo:
        privatize_dataset(_fixture_docs(3), configs("S3"), sink, avg)
    assert excinfo.value.error_code == "INVALID_CONFIG"
    assert sink.getvalue() == ""


def test_doc_budget_error_is_a_config_error():
    with pytest.raises(InvalidConfigError) as excinfo:
        doc_budget(1.0, 0.0)
    assert excinfo.value.details["avg_words_per_text"] == 0.0


def test_degenerate_and_failed_records_do_not_abort(configs, monkeypatch):
    cfg = configs("S1", connectors=ConnectorList(words=["the", "of"]))
    real_sentenceize = pipeline_service.sentenceize

    def flaky(text):
        if text == "boom":
            raise TextDecodeError(0)
        return real_sentenceize(text)

    monkeypatch.setattr(pipeline_service, "sentenceize", flaky)
    docs = [
        Document(id="1", text="the of the"),
        Document(id="2", text="boom"),
        Document(id="3", text=SAMPLE_TEXT),
    ]
    output, summary = _write_dataset(cfg, docs, avg=5.0)
    records = [json.loads(line) for line in output.splitlines()]

    assert records[0]["warning"] == "DEGENERATE_PLAN"
    assert records[0]["privatized"] == "the of the"
    assert records[1]["error"]["error_code"] == "DECODE_ERROR"
    assert records[1]["privatized"] is None
    assert records[2]["error"] is None
    assert (summary.records, summary.failed, summary.degenerate) == (3, 1, 1)


def test_json_lines_are_canonical(configs):
    output, _ = _write_dataset(configs("S3"), _fixture_docs(3))
    for line in output.splitlines():
        assert line == json.dumps(json.loads(line), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def _inversions(values):
    return sum(1 for a, b in zip(values, values[1:]) if b < a)


@pytest.mark.slow
@pytest.mark.parametrize("strategy", ["S1", "S3"])
def test_privacy_utility_trend(configs, strategy):
    docs = _fixture_docs(500)
    for seed in (1, 2, 3):
        rates, cosines = [], []
        for epsilon in (0.1, 1.0, 10.0, 100.0):
            cfg = configs(strategy, base_epsilon=epsilon, mechanism=MechanismConfig(seed=seed))
            output, summary = _write_dataset(cfg, docs)
            records = [PrivatizedRecord.model_validate_json(line) for line in output.splitlines()]
            report = evaluate(docs, records, cfg.model)
            rates.append(summary.self_sub_rate)
            cosines.append(report.cosine_mean)
        assert _inversions(rates) <= 1
        assert _inversions(cosines) <= 1
        assert np.isclose(rates[-1], 1.0, atol=0.05)
