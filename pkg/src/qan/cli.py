"""Command-line entry point.

Subcommands: ``ingest``, ``train``, ``eval``, ``ablate``,
``llm-knowledge``, ``llm-select``, ``report``.  Every run writes to
deterministic file names under its output directory so identically
seeded invocations are byte-for-byte reproducible.  Exit status:
0 success, 2 usage, 3 data error, 4 transport error, 1 anything else.

A plain-text config file (``key = value`` lines, ``#`` comments) may
supply hyperparameters; explicit flags take precedence over the file,
which takes precedence over built-in defaults.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .data import corpus_stats, parse_corpus, write_jsonl
from .errors import ConfigError, DataError, QanError, TransportError
from .estimator import HyperParams, QANClassifier, run_ablation
from .llm import (CachingClient, DecodingParams, HTTPCompletionClient,
                  ResponseCache, ScriptedClient, evaluate_llm,
                  generate_knowledge, load_knowledge_jsonl, load_templates,
                  write_knowledge_jsonl, write_llm_report,
                  write_prompt_counts_csv, write_traces_jsonl)
from .metrics import compute_report, emit_report, records_from_jsonl, records_to_jsonl
from .network import VARIANTS

_HP_FIELDS = {f.name: f.type for f in dataclasses.fields(HyperParams)}
_CONFIG_KEYS = {**_HP_FIELDS, "variant": "str", "min_token_count": "int",
                "vectors_path": "str"}


def parse_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines; unknown keys are an error."""
    values: dict = {}
    for lineno, raw in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        kind = str(_CONFIG_KEYS[key])
        if "float" in kind:
            values[key] = float(value)
        elif "int" in kind:
            values[key] = int(value)
        else:
            values[key] = value
    return values


def _resolve_params(config_path: str | None, flag_values: dict) -> dict:
    """flags > config file > HyperParams defaults."""
    params = {name: getattr(HyperParams(), name) for name in _HP_FIELDS}
    params.update({"variant": "full", "min_token_count": 1, "vectors_path": None})
    if config_path:
        params.update(parse_config_file(config_path))
    params.update({k: v for k, v in flag_values.items() if v is not None})
    return params


def _hp_options(command):
    for name in reversed(list(_HP_FIELDS)):
        flag = "--" + name.replace("_", "-")
        kind = float if "float" in str(_HP_FIELDS[name]) else int
        command = click.option(flag, name, type=kind, default=None,
                               help=f"override {name}")(command)
    command = click.option("--variant", type=click.Choice(VARIANTS),
                           default=None, help="model variant")(command)
    command = click.option("--min-token-count", type=int, default=None,
                           help="vocabulary frequency cutoff")(command)
    command = click.option("--vectors-path", type=click.Path(exists=True),
                           default=None,
                           help="precomputed-vector store file")(command)
    command = click.option("--config", "config_path",
                           type=click.Path(exists=True), default=None,
                           help="key = value settings file")(command)
    return command


@click.group()
@click.version_option(package_name="qan")
def cli() -> None:
    """Answer-selection workbench: corpus tools, model training, metrics,
    and LLM cascade evaluation."""


@cli.command()
@click.argument("inputs", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--format", "corpus_format", required=True,
              type=click.Choice(["semeval2015-xml", "semeval2017-xml",
                                 "canonical-jsonl"]))
@click.option("--out", required=True, type=click.Path())
@click.option("--stats-out", type=click.Path(), default=None,
              help="where to write corpus statistics (default <out>.stats.json)")
def ingest(inputs, corpus_format, out, stats_out) -> None:
    """Convert corpus files to canonical JSONL and report statistics."""
    threads = []
    for path in inputs:
        threads.extend(parse_corpus(path, corpus_format))
    write_jsonl(threads, out)
    stats = corpus_stats(threads)
    stats_path = stats_out or f"{out}.stats.json"
    Path(stats_path).write_text(
        json.dumps(stats.as_dict(), indent=2) + "\n", encoding="utf-8")
    click.echo(f"questions={stats.question_count} answers={stats.answer_count}")
    click.echo(f"wrote {out} and {stats_path}")


def _fit_classifier(params: dict, corpus: str, dev: str | None) -> tuple:
    train_threads = parse_corpus(corpus, "canonical-jsonl")
    dev_threads = parse_corpus(dev, "canonical-jsonl") if dev else None
    clf = QANClassifier(**params)
    clf.fit_threads(train_threads, dev_threads)
    return clf, (dev_threads if dev_threads is not None else train_threads)


@cli.command()
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="training split (canonical JSONL)")
@click.option("--dev", type=click.Path(exists=True), default=None,
              help="development split (canonical JSONL)")
@click.option("--out", "out_dir", required=True, type=click.Path())
@_hp_options
def train(corpus, dev, out_dir, config_path, **flags) -> None:
    """Train a model; writes checkpoint, history, and the dev report."""
    params = _resolve_params(config_path, flags)
    clf, dev_threads = _fit_classifier(params, corpus, dev)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clf.save(out / "checkpoint.qanc")
    (out / "history.json").write_text(
        json.dumps(clf.history_.as_dict(), indent=2) + "\n", encoding="utf-8")
    records = clf.predict_threads(dev_threads)
    emit_report(compute_report(records, model=params["variant"]),
                out / "dev_report.json", "json")
    best = clf.history_.best_epoch
    click.echo(f"trained {params['variant']} for {len(clf.history_)} epochs "
               f"(best dev epoch {best})")
    click.echo(f"wrote {out / 'checkpoint.qanc'}")


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--format", "report_format", type=click.Choice(["json", "csv"]),
              default="json")
@click.option("--vectors-path", type=click.Path(exists=True), default=None)
@click.option("--model-name", default=None,
              help="model column in the report (default: the variant)")
def eval_cmd(checkpoint, corpus, out_dir, report_format, vectors_path,
             model_name) -> None:
    """Score a corpus with a saved checkpoint."""
    clf = QANClassifier.load(checkpoint, vectors_path=vectors_path)
    threads = parse_corpus(corpus, "canonical-jsonl")
    records = clf.predict_threads(threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records_to_jsonl(records, out / "predictions.jsonl")
    report = compute_report(records, model=model_name or clf.variant)
    emit_report(report, out / f"report.{report_format}", report_format)
    map_text = "NA" if report.map is None else f"{report.map:.4f}"
    click.echo(f"map={map_text} f1={report.f1:.4f} acc={report.acc:.4f}")


@cli.command()
@click.option("--corpus", required=True, type=click.Path(exists=True),
              help="training split (canonical JSONL)")
@click.option("--dev", type=click.Path(exists=True), default=None)
@click.option("--test", type=click.Path(exists=True), default=None,
              help="evaluation split (defaults to the dev split, then train)")
@click.option("--out", "out_dir", required=True, type=click.Path())
@_hp_options
def ablate(corpus, dev, test, out_dir, config_path, **flags) -> None:
    """Train and score all seven model variants."""
    params = _resolve_params(config_path, flags)
    seed = params.pop("seed")
    params.pop("variant")
    train_threads = parse_corpus(corpus, "canonical-jsonl")
    dev_threads = parse_corpus(dev, "canonical-jsonl") if dev else None
    if test:
        test_threads = parse_corpus(test, "canonical-jsonl")
    else:
        test_threads = dev_threads if dev_threads is not None else train_threads
    reports = run_ablation(train_threads, dev_threads, test_threads,
                           seed=seed, **params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_report(reports, out / "ablation.csv", "csv")
    emit_report(reports, out / "ablation.json", "json")
    for report in reports:
        map_text = "NA" if report.map is None else f"{report.map:.4f}"
        click.echo(f"{report.model}: map={map_text} f1={report.f1:.4f} "
                   f"acc={report.acc:.4f}")


def _build_client(mock: str | None, endpoint: str | None,
                  cache_dir: str | None, resume: bool):
    if (mock is None) == (endpoint is None):
        raise click.UsageError("provide exactly one of --mock or --endpoint")
    if resume and cache_dir is None:
        raise click.UsageError("--resume requires --cache")
    client = (ScriptedClient.from_jsonl(mock) if mock
              else HTTPCompletionClient(endpoint))
    if cache_dir:
        client = CachingClient(client, ResponseCache(cache_dir))
    return client


_decoding_options = [
    click.option("--temperature", type=float, default=0.0, show_default=True),
    click.option("--max-tokens", type=int, default=256, show_default=True),
    click.option("--llm-seed", type=int, default=0, show_default=True),
]


def _with_decoding(command):
    for option in reversed(_decoding_options):
        command = option(command)
    return command


@cli.command("llm-knowledge")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--mock", type=click.Path(exists=True), default=None,
              help="scripted completions (JSONL of prompt_sha256/text)")
@click.option("--endpoint", default=None, help="completion service URL")
@click.option("--cache", "cache_dir", type=click.Path(), default=None)
@click.option("--resume", is_flag=True, help="reuse an existing cache")
@_with_decoding
def llm_knowledge(corpus, out, mock, endpoint, cache_dir, resume,
                  temperature, max_tokens, llm_seed) -> None:
    """Generate a knowledge hint per question from its first Good answer."""
    client = _build_client(mock, endpoint, cache_dir, resume)
    params = DecodingParams(temperature=temperature, max_tokens=max_tokens,
                            seed=llm_seed)
    threads = parse_corpus(corpus, "canonical-jsonl")
    records, skipped = [], 0
    for thread in threads:
        if not any(a.gold == "Good" for a in thread.answers):
            skipped += 1
            click.echo(f"skipping {thread.qid}: no Good answer", err=True)
            continue
        records.append(generate_knowledge(thread, client, params))
    write_knowledge_jsonl(records, out)
    click.echo(f"wrote {len(records)} knowledge records to {out} "
               f"({skipped} skipped)")


@cli.command("llm-select")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--knowledge", "knowledge_path", type=click.Path(exists=True),
              default=None, help="knowledge JSONL from llm-knowledge")
@click.option("--no-knowledge", is_flag=True,
              help="run the without-knowledge arm")
@click.option("--templates", "templates_dir", type=click.Path(exists=True),
              default=None, help="directory of prompt template files")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--mock", type=click.Path(exists=True), default=None)
@click.option("--endpoint", default=None)
@click.option("--cache", "cache_dir", type=click.Path(), default=None)
@click.option("--resume", is_flag=True, help="reuse an existing cache")
@click.option("--workers", type=int, default=4, show_default=True)
@click.option("--label", default=None, help="corpus label in reports")
@_with_decoding
def llm_select(corpus, knowledge_path, no_knowledge, templates_dir, out_dir,
               mock, endpoint, cache_dir, resume, workers, label,
               temperature, max_tokens, llm_seed) -> None:
    """Run the prompt cascade over a corpus and write accuracy reports."""
    if no_knowledge == (knowledge_path is not None):
        raise click.UsageError("provide --knowledge or --no-knowledge")
    client = _build_client(mock, endpoint, cache_dir, resume)
    params = DecodingParams(temperature=temperature, max_tokens=max_tokens,
                            seed=llm_seed)
    threads = parse_corpus(corpus, "canonical-jsonl")
    templates = load_templates(templates_dir)
    mode = "without-knowledge" if no_knowledge else "with-knowledge"
    knowledge = None
    if not no_knowledge:
        knowledge = {qid: record.text for qid, record
                     in load_knowledge_jsonl(knowledge_path).items()}
    evaluation = evaluate_llm(threads, mode, client, knowledge=knowledge,
                              templates=templates, params=params,
                              workers=workers,
                              corpus_label=label or Path(corpus).name)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = mode.replace("-", "_")
    write_llm_report(evaluation, out / f"llm_report_{suffix}.json")
    write_prompt_counts_csv(evaluation, out / f"prompt_counts_{suffix}.csv")
    write_traces_jsonl(evaluation.traces, out / f"traces_{suffix}.jsonl")
    if evaluation.aborted:
        click.echo(f"{len(evaluation.aborted)} questions aborted on transport "
                   f"errors; rerun with --resume to finish", err=True)
    acc = "NA" if evaluation.accuracy is None else f"{evaluation.accuracy:.4f}"
    click.echo(f"mode={mode} evaluated={evaluation.evaluated} accuracy={acc}")


@cli.command()
@click.option("--predictions", required=True, type=click.Path(exists=True),
              help="prediction JSONL (qid, aid, p_*, gold)")
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "report_format", type=click.Choice(["json", "csv"]),
              default="json")
@click.option("--model", default="qan")
def report(predictions, out, report_format, model) -> None:
    """Compute MAP / F1 / accuracy from a prediction file."""
    records = records_from_jsonl(predictions)
    emit_report(compute_report(records, model=model), out, report_format)
    click.echo(f"wrote {out}")


def main(argv: list[str] | None = None) -> int:
    """Console entry point with distinguishable exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except TransportError as exc:
        click.echo(f"transport error: {exc}", err=True)
        return 4
    except ConfigError as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return 2
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 3
    except QanError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
