"""End-to-end tests for the collodp command line."""

import json

import pytest

from cli import main
from conftest import SAMPLE_TEXT
from services.collocation_service import ScoredTable, load_table, save_table

FILLER = [
    "red fox runs", "blue sky falls", "green hill sleeps", "grey stone waits", "pale moon hums",
    "dark wood creaks", "warm rain drips", "cold wind howls", "bright star burns", "soft snow lies",
]


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def _last_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def tables(tmp_path, sample_tables):
    bigrams, trigrams = sample_tables
    return save_table(bigrams, tmp_path / "bigrams.tsv"), save_table(trigrams, tmp_path / "trigrams.tsv")


def test_extract_writes_tables(tmp_path, write_text, capsys):
    corpus = write_text("corpus.txt", "\n".join(["Alpha beta gamma."] * 3 + FILLER) + "\n")
    code = main([
        "extract", "--input", str(corpus), "--min-count", "3",
        "--bigrams-out", str(tmp_path / "b.tsv"), "--trigrams-out", str(tmp_path / "t.tsv"),
    ])
    assert code == 0
    summary = _json_out(capsys)
    assert summary["total_words"] == 39
    assert summary["min_count"] == 3
    bigrams, trigrams = load_table(tmp_path / "b.tsv"), load_table(tmp_path / "t.tsv")
    assert set(bigrams) == {("alpha", "beta"), ("beta", "gamma")}
    assert set(trigrams) == {("alpha", "beta", "gamma")}
    assert summary["bigrams"] == 2 and summary["trigrams"] == 1


def test_tokenize_prints_one_sentence_per_line(tmp_path, write_text, capsys):
    bigrams = save_table(ScoredTable({("alpha", "beta"): 5.0}), tmp_path / "b.tsv")
    text = write_text("in.txt", "Alpha beta gamma. Delta!\n")
    assert main(["tokenize", "--input", str(text), "--bigrams", str(bigrams), "--algorithm", "MST"]) == 0
    assert capsys.readouterr().out.splitlines() == ["alpha_beta gamma", "delta"]


def test_privatize_writes_records_and_summary(tmp_path, write_text, model_file, coll_model, tables, capsys):
    bigrams, trigrams = tables
    text = write_text("in.txt", SAMPLE_TEXT + "\n")
    out, summary_path = tmp_path / "out.jsonl", tmp_path / "summary.json"
    code = main([
        "privatize", "--input", str(text), "--strategy", "s3", "--epsilon", "1e6",
        "--model", str(model_file(coll_model)), "--bigrams", str(bigrams), "--trigrams", str(trigrams),
        "--out", str(out), "--summary", str(summary_path),
    ])
    assert code == 0
    records = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert len(records) == 1
    record = records[0]
    assert record["id"] == "1"
    assert record["tokens"][:3] == ["quick_brown_fox", "jumps_lazy", "dogs_sleep"]
    assert record["output_tokens"] == record["tokens"]
    assert record["privatized"] == SAMPLE_TEXT
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    assert summary["records"] == 1
    assert summary["self_sub_rate"] == 1.0


def test_evaluate_reports_identity_and_csv(tmp_path, write_text, model_file, word_model, capsys):
    text = write_text("in.txt", SAMPLE_TEXT + "\n" + "lazy dogs sleep\n")
    model = model_file(word_model, "words.vec")
    privatized = tmp_path / "priv.jsonl"
    assert main([
        "privatize", "--input", str(text), "--strategy", "S1", "--epsilon", "1e6",
        "--word-model", str(model), "--out", str(privatized),
    ]) == 0
    capsys.readouterr()

    csv_path = tmp_path / "rows.csv"
    code = main([
        "evaluate", "--original", str(text), "--privatized", str(privatized),
        "--model", str(model), "--csv", str(csv_path),
    ])
    assert code == 0
    report = _json_out(capsys)
    assert report["records"] == 2
    assert report["cosine_mean"] == 1.0
    assert report["self_sub_rate"] == 1.0
    rows = csv_path.read_text(encoding="utf-8").splitlines()
    assert rows[0] == "id,cosine,original_in_vocab,privatized_in_vocab,empty_embedding"
    assert rows[1:] == ["1,1.0,10,10,False", "2,1.0,3,3,False"]


def test_verify_dp_single_pair(model_file, fixture_model, capsys):
    model = str(model_file(fixture_model))
    args = ["verify-dp", "--model", model, "--w", "a", "--w2", "b", "--epsilon", "2", "--samples", "20000", "--seed", "3"]
    assert main(args) == 0
    report = _json_out(capsys)
    assert report["w"] == "a" and report["w2"] == "b"
    assert report["bound"] == 2.0
    assert report["verdict"] in {"pass", "inconclusive"}

    assert main(args + ["--pretty"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    assert "bound=2.0000" in lines[0]


def test_verify_dp_needs_both_words(model_file, fixture_model, capsys):
    code = main(["verify-dp", "--model", str(model_file(fixture_model)), "--w", "a", "--epsilon", "1"])
    assert code == 1
    assert _last_error(capsys)["error_code"] == "INVALID_CONFIG"


def test_budget_table_outputs(capsys):
    assert main(["budget-table", "--csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "dataset,avg_words,0.1,0.5,1,5,10,15,25,50"
    assert lines[1].startswith("CoLA,7.8,0.78,3.90,7.80,")

    assert main(["budget-table", "--epsilons", "1", "--average", "Mine=12.5"]) == 0
    table = _json_out(capsys)
    assert table["base_epsilons"] == [1.0]
    assert table["rows"] == [{"dataset": "Mine", "avg_words": 12.5, "budgets": [12.5]}]


def test_missing_required_argument_is_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["privatize", "--epsilon", "1"])
    assert excinfo.value.code == 1


def test_bad_average_is_usage_error(capsys):
    assert main(["budget-table", "--average", "CoLA"]) == 1
    assert _last_error(capsys)["error_code"] == "INVALID_CONFIG"


def test_zero_threads_is_usage_error():
    assert main(["budget-table", "--threads", "0"]) == 1


def test_malformed_table_is_data_error(write_text, capsys):
    bad = write_text("bad.tsv", "#N=10\nalpha beta\tnot-a-count\t3.0\n")
    text = write_text("in.txt", "alpha beta\n")
    assert main(["tokenize", "--input", str(text), "--bigrams", str(bad)]) == 2
    error = _last_error(capsys)
    assert error["error_code"] == "TABLE_PARSE_ERROR"
    assert error["details"]["line"] == 2


def test_missing_input_is_data_error(tmp_path, capsys):
    assert main(["tokenize", "--input", str(tmp_path / "nope.txt")]) == 2
    assert _last_error(capsys)["error_code"] == "IO_ERROR"


def test_privatize_rejects_repeated_ids(tmp_path, write_text, model_file, coll_model, tables, capsys):
    bigrams, trigrams = tables
    lines = [json.dumps({"id": "x", "text": SAMPLE_TEXT})] * 5
    data = write_text("dupes.jsonl", "\n".join(lines) + "\n")
    out = tmp_path / "out.jsonl"
    code = main([
        "privatize", "--input", str(data), "--strategy", "S3", "--epsilon", "0.05",
        "--model", str(model_file(coll_model)), "--bigrams", str(bigrams), "--trigrams", str(trigrams),
        "--seed", "1", "--out", str(out),
    ])
    assert code == 2
    error = _last_error(capsys)
    assert error["error_code"] == "DATASET_PARSE_ERROR"
    assert error["details"]["line"] == 2
    assert not out.exists()


@pytest.mark.parametrize("avg", ["0", "-2.5"])
def test_privatize_non_positive_avg_words_is_usage_error(write_text, model_file, word_model, capsys, avg):
    text = write_text("in.txt", SAMPLE_TEXT + "\n")
    code = main([
        "privatize", "--input", str(text), "--strategy", "S1", "--epsilon", "1",
        "--word-model", str(model_file(word_model)), "--avg-words", avg,
    ])
    assert code == 1
    assert _last_error(capsys)["error_code"] == "INVALID_CONFIG"


def test_privatize_vocab_filters_word_model(write_text, model_file, word_model, capsys):
    text = write_text("in.txt", SAMPLE_TEXT + "\n")
    vocab = write_text("vocab.txt", "# kept words\nquick\nbrown\nfox\njumps\nlazy\n")
    code = main([
        "privatize", "--input", str(text), "--strategy", "S1", "--epsilon", "1e6",
        "--word-model", str(model_file(word_model)), "--vocab", str(vocab),
    ])
    assert code == 0
    record = json.loads(capsys.readouterr().out.splitlines()[0])
    assert record["privatized"] == SAMPLE_TEXT
    assert [(e["surface"], e["action"]) for e in record["oov"]] == [
        (w, "copied") for w in ["dogs", "sleep", "deep", "river", "banks"]
    ]
    assert record["self_subs"] == 5


def test_verify_dp_vocab_limits_pairs(write_text, model_file, fixture_model, capsys):
    vocab = write_text("vocab.txt", "a\nb\n")
    code = main([
        "verify-dp", "--model", str(model_file(fixture_model)), "--vocab", str(vocab),
        "--epsilon", "1", "--samples", "2000", "--min-count", "10",
    ])
    assert code == 0
    reports = _json_out(capsys)["reports"]
    assert {(r["w"], r["w2"]) for r in reports} == {("a", "b"), ("b", "a")}


def test_vocab_without_model_tokens_is_data_error(write_text, model_file, fixture_model, capsys):
    vocab = write_text("vocab.txt", "zebra\n")
    code = main(["verify-dp", "--model", str(model_file(fixture_model)), "--vocab", str(vocab), "--epsilon", "1"])
    assert code == 2
    assert _last_error(capsys)["error_code"] == "EMPTY_VOCABULARY"


def test_oov_budget_help_describes_both_modes(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["privatize", "--help"])
    assert excinfo.value.code == 0
    help_text = " ".join(capsys.readouterr().out.split())
    assert "'split' (default) divides the token's epsilon over its pieces" in help_text
    assert "'repeat' does exactly that and can overspend" in help_text


def test_self_sub_curve(model_file, fixture_model, capsys):
    model = str(model_file(fixture_model))
    args = ["self-sub-curve", "--model", model, "--epsilons", "0.01", "1000", "--trials", "500", "--seed", "2"]
    assert main(args) == 0
    report = _json_out(capsys)
    assert report["trials"] == 500
    assert set(report["curve"]) == {"0.01", "1000"}
    assert report["curve"]["1000"] == 1.0
    assert report["curve"]["0.01"] < 1.0

    assert main(args) == 0
    assert _json_out(capsys) == report


def test_self_sub_curve_rejects_zero_trials(model_file, fixture_model, capsys):
    code = main(["self-sub-curve", "--model", str(model_file(fixture_model)), "--epsilons", "1", "--trials", "0"])
    assert code == 1
    assert _last_error(capsys)["error_code"] == "INVALID_CONFIG"


def test_evaluate_writes_composition_log(
    tmp_path, write_text, model_file, coll_model, word_model, tables, capsys,
):
    bigrams, trigrams = tables
    text = write_text("in.txt", SAMPLE_TEXT + "\n")
    colls = str(model_file(coll_model))
    privatized = tmp_path / "priv.jsonl"
    assert main([
        "privatize", "--input", str(text), "--strategy", "S3", "--epsilon", "1e6",
        "--model", colls, "--bigrams", str(bigrams), "--trigrams", str(trigrams), "--out", str(privatized),
    ]) == 0
    capsys.readouterr()

    composition = tmp_path / "composition.jsonl"
    assert main([
        "evaluate", "--original", str(text), "--privatized", str(privatized),
        "--model", str(model_file(word_model, "words.vec")),
        "--composition", str(composition), "--composition-model", colls,
    ]) == 0
    logs = [json.loads(line) for line in composition.read_text(encoding="utf-8").splitlines()]
    assert len(logs) == 1
    assert logs[0]["id"] == "1"
    assert [e["input"] for e in logs[0]["entries"]][:3] == ["quick_brown_fox", "jumps_lazy", "dogs_sleep"]
    assert all(e["input"] == e["output"] and e["distance"] == 0.0 for e in logs[0]["entries"])
    assert logs[0]["log_bound"] == 0.0
