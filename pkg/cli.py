"""collodp command-line interface.

Usage: python cli.py <subcommand> [options]

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import BaseModel, ValidationError

from config import Settings, load_settings
from models.schemas import ErrorResponse, MechanismConfig
from services.collocation_service import extract, load_table, save_table
from services.corpus_service import load_connectors, read_documents
from services.embedding_service import EmbeddingModel, filter_vocab, load_model, normalize_rows, vocab_words
from services.eval_service import (
    DEFAULT_AVERAGES,
    DEFAULT_EPSILON_GRID,
    budget_table,
    budget_table_csv,
    cosine_rows,
    evaluate,
    format_budget_table,
    read_records,
    rows_to_csv,
)
from services.mechanism_service import self_substitution_curve, verify_dp_ratio
from services.pipeline_service import build_strategy_config, composition_log, privatize_dataset
from services.tokenize_service import export_line, tokenize_text
from utils.atomic_write import atomic_write_text, atomic_writer
from utils.errors import CollodpError, InvalidConfigError
from utils.log_context import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _emit(payload, out: Optional[Path], text: Optional[str] = None) -> None:
    """Write ``text`` (or ``payload`` as indented JSON) to ``out`` or stdout."""
    if text is None:
        if isinstance(payload, BaseModel):
            payload = payload.model_dump(mode="json")
        text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
    if not text.endswith("\n"):
        text += "\n"
    if out is not None:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _report_error(error: ErrorResponse) -> None:
    sys.stderr.write(json.dumps(error.model_dump(), sort_keys=True, ensure_ascii=False) + "\n")


def _load_word_list(path: Path) -> set:
    return set(load_connectors(path).words)


def _load_embeddings(path: Path, settings: Settings, normalize: bool, vocab: Optional[Path] = None) -> EmbeddingModel:
    """Load a model, keep only tokens built from ``vocab`` words, then optionally unit-normalize."""
    model = load_model(path, settings.cache_dir)
    if vocab is not None:
        model = filter_vocab(model, _load_word_list(vocab))
        logger.info(f"{path.name}: {len(model)} tokens over {len(vocab_words(model))} words after vocabulary filter")
    return normalize_rows(model) if normalize else model


def _parse_averages(items: Optional[List[str]]) -> Dict[str, float]:
    if not items:
        return dict(DEFAULT_AVERAGES)
    averages = {}
    for item in items:
        name, sep, value = item.partition("=")
        try:
            if not sep or not name:
                raise ValueError
            averages[name] = float(value)
        except ValueError:
            raise InvalidConfigError(f"--average must look like NAME=FLOAT, got {item!r}")
    return averages


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_extract(args: argparse.Namespace, settings: Settings) -> int:
    connectors = load_connectors(settings.stopwords)
    documents = read_documents(args.input, args.format, args.field, args.id_field)
    bigrams, trigrams = extract(
        documents,
        min_pmi=settings.min_pmi,
        min_count=settings.min_count,
        connectors=connectors,
        workers=settings.threads,
    )
    save_table(bigrams, args.bigrams_out)
    save_table(trigrams, args.trigrams_out)
    _emit(
        {
            "total_words": bigrams.total_words,
            "bigrams": len(bigrams),
            "trigrams": len(trigrams),
            "min_pmi": settings.min_pmi,
            "min_count": settings.min_count,
        },
        args.out,
    )
    return EXIT_OK


def cmd_tokenize(args: argparse.Namespace, settings: Settings) -> int:
    bigrams = load_table(args.bigrams) if args.bigrams else None
    trigrams = load_table(args.trigrams) if args.trigrams else None
    sentences = 0

    def write_lines(sink) -> None:
        nonlocal sentences
        for doc in read_documents(args.input, args.format, args.field, args.id_field):
            for tokenization in tokenize_text(doc.text, bigrams, trigrams, args.algorithm):
                sink.write(export_line(tokenization) + "\n")
                sentences += 1

    if args.out is not None:
        with atomic_writer(args.out) as sink:
            write_lines(sink)
    else:
        write_lines(sys.stdout)
    logger.info(f"Tokenized {sentences} sentences with {args.algorithm.upper()}")
    return EXIT_OK


def cmd_privatize(args: argparse.Namespace, settings: Settings) -> int:
    mechanism = MechanismConfig(kind=args.mechanism, lam=args.lam, t=args.t, seed=settings.seed)
    resources = {}
    if args.word_model:
        resources["word_model"] = _load_embeddings(args.word_model, settings, args.normalize, args.vocab)
    if args.model:
        resources["coll_model"] = _load_embeddings(args.model, settings, args.normalize, args.vocab)
    if args.bigrams:
        resources["bigrams"] = load_table(args.bigrams)
    if args.trigrams:
        resources["trigrams"] = load_table(args.trigrams)

    cfg = build_strategy_config(
        strategy=args.strategy,
        base_epsilon=args.epsilon,
        connectors=load_connectors(settings.stopwords),
        mechanism=mechanism,
        oov_budget=args.oov_budget,
        prune=args.prune,
        **resources,
    )
    documents = read_documents(args.input, args.format, args.field, args.id_field)

    if args.out is not None:
        with atomic_writer(args.out) as sink:
            summary = privatize_dataset(documents, cfg, sink, args.avg_words, settings.threads)
        _emit(summary, args.summary)
    else:
        summary = privatize_dataset(documents, cfg, sys.stdout, args.avg_words, settings.threads)
        if args.summary is not None:
            _emit(summary, args.summary)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    model = _load_embeddings(args.model, settings, args.normalize)
    originals = list(read_documents(args.original, args.format, args.field, args.id_field))
    records = list(read_records(args.privatized))
    target = _load_word_list(args.target_vocab) if args.target_vocab else None

    report = evaluate(originals, records, model, target)
    if args.csv is not None:
        atomic_write_text(args.csv, rows_to_csv(cosine_rows(originals, records, model)))
    if args.composition is not None:
        space = _load_embeddings(args.composition_model, settings, args.normalize) if args.composition_model else model
        with atomic_writer(args.composition) as sink:
            for record in records:
                if record.error is None:
                    log = composition_log(record, space)
                    sink.write(json.dumps({"id": record.id, **log.model_dump(mode="json")}, sort_keys=True) + "\n")

    text = None
    if args.pretty:
        text = "\n".join([
            f"records          {report.records}",
            f"cosine_mean      {report.cosine_mean:.4f}",
            f"self_sub_rate    {report.self_sub_rate:.4f}",
            f"empty_embeddings {report.empty_embeddings}",
            "token_stats      " + ", ".join(f"{n}-gram: {c}" for n, c in report.token_stats.items()),
        ])
    _emit(report, args.out, text)
    return EXIT_OK


def cmd_verify_dp(args: argparse.Namespace, settings: Settings) -> int:
    model = _load_embeddings(args.model, settings, args.normalize, args.vocab)
    cfg = MechanismConfig(kind=args.mechanism, epsilon=args.epsilon, lam=args.lam, t=args.t, seed=settings.seed)
    if args.w and args.w2:
        pairs = [(args.w, args.w2)]
    elif not args.w and not args.w2:
        pairs = [(a, b) for a in model.vocab for b in model.vocab if a != b]
    else:
        raise InvalidConfigError("--w and --w2 must be given together (or both omitted for all pairs)")

    reports = [
        verify_dp_ratio(model, cfg, w, w2, args.samples, args.confidence, args.min_count)
        for w, w2 in pairs
    ]
    text = None
    if args.pretty:
        lines = []
        for r in reports:
            observed = "n/a" if r.max_log_ratio is None else f"{r.max_log_ratio:.4f}"
            lines.append(f"{r.w:>16} {r.w2:>16}  bound={r.bound:.4f}  max={observed}  {r.verdict}")
        text = "\n".join(lines)
    payload = reports[0] if len(reports) == 1 else {"reports": [r.model_dump(mode="json") for r in reports]}
    _emit(payload, args.out, text)
    return EXIT_OK


def cmd_self_sub_curve(args: argparse.Namespace, settings: Settings) -> int:
    if args.trials < 1 or any(eps <= 0 for eps in args.epsilons):
        raise InvalidConfigError("--trials and every --epsilons value must be positive")
    model = _load_embeddings(args.model, settings, args.normalize, args.vocab)
    cfg = MechanismConfig(kind=args.mechanism, lam=args.lam, t=args.t, seed=settings.seed)
    tokens = args.tokens or list(model.vocab)
    curve = self_substitution_curve(model, cfg, tokens, args.epsilons, args.trials)

    text = None
    if args.pretty:
        text = "\n".join(f"eps={eps:<10g} {rate:.4f}" for eps, rate in curve.items())
    _emit({"mechanism": args.mechanism, "trials": args.trials, "curve": {f"{e:g}": r for e, r in curve.items()}}, args.out, text)
    return EXIT_OK


def cmd_budget_table(args: argparse.Namespace, settings: Settings) -> int:
    table = budget_table(args.epsilons or list(DEFAULT_EPSILON_GRID), _parse_averages(args.average))
    if args.csv:
        text = budget_table_csv(table)
    elif args.pretty:
        text = format_budget_table(table)
    else:
        text = None
    _emit(table, args.out, text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML settings file")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--threads", type=int, help="Worker threads (default: COLLODP_THREADS or CPU count)")
    parser.add_argument("--out", type=Path, help="Output file (default: stdout)")
    parser.add_argument("--pretty", action="store_true", help="Human-readable output")


def _add_input(parser: argparse.ArgumentParser, flag: str = "--input") -> None:
    parser.add_argument(flag, type=Path, required=True)
    parser.add_argument("--format", choices=["auto", "text", "jsonl"], default="auto")
    parser.add_argument("--field", default="text", help="JSONL text field")
    parser.add_argument("--id-field", default="id", help="JSONL id field")


def _add_mechanism(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mechanism", choices=["madlib", "mahalanobis", "vickrey"], default="madlib")
    parser.add_argument("--lambda", dest="lam", type=float, default=0.2, help="Mahalanobis regularization")
    parser.add_argument("--t", type=float, default=0.5, help="Vickrey tuning parameter")
    parser.add_argument("--seed", type=int, help="Global RNG seed (default: COLLODP_SEED or 0)")
    parser.add_argument("--normalize", action="store_true", help="Scale embedding rows to unit norm")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="collodp", description="Collocation-level metric-DP text privatization")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("extract", help="Count n-grams and write PMI-scored collocation tables")
    _add_common(p)
    _add_input(p)
    p.add_argument("--bigrams-out", type=Path, required=True)
    p.add_argument("--trigrams-out", type=Path, required=True)
    p.add_argument("--min-pmi", type=float)
    p.add_argument("--min-count", type=int)
    p.add_argument("--stopwords", type=Path)
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("tokenize", help="Tokenize text into collocations (one sentence per line)")
    _add_common(p)
    _add_input(p)
    p.add_argument("--bigrams", type=Path)
    p.add_argument("--trigrams", type=Path)
    p.add_argument("--algorithm", type=str.lower, choices=["gst", "mst"], default="gst")
    p.set_defaults(handler=cmd_tokenize)

    p = sub.add_parser("privatize", help="Privatize a dataset under strategy S1-S4")
    _add_common(p)
    _add_input(p)
    _add_mechanism(p)
    p.add_argument("--strategy", type=str.upper, choices=["S1", "S2", "S3", "S4"], required=True)
    p.add_argument("--epsilon", type=float, required=True, help="Base (per-word) epsilon")
    p.add_argument("--bigrams", type=Path)
    p.add_argument("--trigrams", type=Path)
    p.add_argument("--model", type=Path, help="Joint unigram/collocation model (S2-S4)")
    p.add_argument("--word-model", type=Path, help="Word-level model (S1)")
    p.add_argument("--stopwords", type=Path)
    p.add_argument("--avg-words", type=float, help="Average words per text (default: computed from input)")
    p.add_argument(
        "--oov-budget",
        choices=["split", "repeat"],
        default="split",
        help=(
            "Budget for the pieces of an unknown bigram or trigram. 'split' (default) divides the token's "
            "epsilon over its pieces so spend never exceeds the document budget; this departs from giving "
            "each piece the full per-token epsilon. 'repeat' does exactly that and can overspend."
        ),
    )
    p.add_argument("--vocab", type=Path, help="Word list; drop model tokens with words outside it")
    p.add_argument("--prune", action="store_true", help="Norm-bound pruning in nearest-neighbor search")
    p.add_argument("--summary", type=Path, help="Write the run summary JSON here")
    p.set_defaults(handler=cmd_privatize)

    p = sub.add_parser("evaluate", help="Static-embedding cosine and self-substitution report")
    _add_common(p)
    _add_input(p, "--original")
    p.add_argument("--privatized", type=Path, required=True, help="JSONL written by 'privatize'")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--target-vocab", type=Path, help="Word list for the vocabulary-match report")
    p.add_argument("--csv", type=Path, help="Per-record cosine rows")
    p.add_argument("--composition", type=Path, help="Per-record (epsilon, distance) log as JSONL")
    p.add_argument("--composition-model", type=Path, help="Model the records were privatized with (default: --model)")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("verify-dp", help="Empirical metric-DP ratio check on a small model")
    _add_common(p)
    _add_mechanism(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--w")
    p.add_argument("--w2")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--confidence", type=float, default=0.99)
    p.add_argument("--min-count", type=int, default=1000)
    p.add_argument("--vocab", type=Path, help="Word list; drop model tokens with words outside it")
    p.set_defaults(handler=cmd_verify_dp)

    p = sub.add_parser("self-sub-curve", help="Self-substitution rate of a mechanism per epsilon")
    _add_common(p)
    _add_mechanism(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--epsilons", type=float, nargs="+", required=True)
    p.add_argument("--tokens", nargs="+", help="Tokens to perturb (default: the whole vocabulary)")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--vocab", type=Path, help="Word list; drop model tokens with words outside it")
    p.set_defaults(handler=cmd_self_sub_curve)

    p = sub.add_parser("budget-table", help="Document budgets per dataset and base epsilon")
    _add_common(p)
    p.add_argument("--epsilons", type=float, nargs="+")
    p.add_argument("--average", action="append", metavar="NAME=AVG", help="Dataset average (repeatable)")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(handler=cmd_budget_table)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    overrides = {
        "threads": args.threads,
        "log_level": args.log_level,
        "seed": getattr(args, "seed", None),
        "stopwords": getattr(args, "stopwords", None),
    }
    if args.command == "extract":
        overrides.update(min_pmi=args.min_pmi, min_count=args.min_count)
    try:
        settings = load_settings(args.config, **overrides)
    except InvalidConfigError as e:
        _report_error(ErrorResponse(**e.to_dict()))
        return EXIT_USAGE

    configure_logging(settings.log_level)
    try:
        return args.handler(args, settings)
    except InvalidConfigError as e:
        _report_error(ErrorResponse(**e.to_dict()))
        return EXIT_USAGE
    except ValidationError as e:
        _report_error(ErrorResponse(
            error_code=InvalidConfigError.error_code,
            message="Invalid parameters",
            details={"errors": [err["msg"] for err in e.errors()]},
        ))
        return EXIT_USAGE
    except CollodpError as e:
        logger.error(f"{e.error_code}: {e.message}")
        _report_error(ErrorResponse(**e.to_dict()))
        return EXIT_DATA
    except OSError as e:
        logger.error(f"I/O error: {e}")
        _report_error(ErrorResponse(error_code="IO_ERROR", message=str(e), details={"path": getattr(e, "filename", None)}))
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
