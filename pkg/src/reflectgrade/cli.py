"""Command-line entry point for reproducible batch runs.

Commands: grade, evaluate, cost, sample, init-rubric. Exit codes are a
stable contract: 0 success, 1 configuration or input error, 2 partial
failure (some reflections failed but results were written). Data files
never embed timestamps; anything time-stamped goes to the log on stderr.
"""

from __future__ import annotations

import json
import logging
import sys
from decimal import Decimal
from pathlib import Path

import click

from .backend import BackendConfig, make_backend
from .corpus import load_annotations, load_reflections, sample_classes, save_reflections
from .costing import (
    DEFAULT_THREAD_COUNTS,
    PRICE_PRESETS,
    PriceSheet,
    build_cost_report,
    format_mean_sd,
    format_usd,
)
from .errors import CorpusGradingError, ReflectgradeError
from .pipeline import GradeFailure, grade_corpus
from .report import compute_report, write_report_csv, write_report_json
from .results_io import (
    predictions_from_rows,
    read_results,
    usages_from_rows,
    write_results,
)
from .rubric import (
    DEFAULT_FEEDBACK_RUBRIC,
    DEFAULT_GRADING_RUBRIC,
    load_rubric,
    serialize_feedback_rubric,
    serialize_rubric,
)
from .templates import PromptTemplates

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_PARTIAL_FAILURE = 2


def _fail(message: str) -> "SystemExit":
    click.echo(f"error: {message}", err=True)
    return SystemExit(EXIT_INPUT_ERROR)


def _check_writable(path: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise _fail(f"output directory does not exist: {parent}")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    config_path = Path(path)
    if not config_path.exists():
        raise _fail(f"config file not found: {config_path}")
    try:
        config = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise _fail(f"config file is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise _fail("config file must hold a JSON object")
    return config


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
def main(verbose: bool) -> None:
    """Grade learner reflections with role-based agents and evaluate the output."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.argument("corpus_path", type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Results JSONL to write.")
@click.option("--config", "config_path", type=click.Path(),
              help="JSON config file; flags override it.")
@click.option("--backend", "backend_kind", type=click.Choice(["http", "scripted"]),
              help="Backend kind.")
@click.option("--script", "script_path", type=click.Path(),
              help="Script file for the scripted backend.")
@click.option("--base-url", help="Chat-completions base URL (http backend).")
@click.option("--model", "model_name", help="Model name (http backend).")
@click.option("--api-key-env", help="Environment variable holding the API key.")
@click.option("--timeout", type=float, help="HTTP timeout in seconds.")
@click.option("--max-retries", type=int, help="Retries for transient HTTP failures.")
@click.option("--rubric", "rubric_path", type=click.Path(),
              help="Grading rubric JSON; defaults to the built-in rubric.")
@click.option("--templates", "templates_dir", type=click.Path(),
              help="Directory of prompt templates; defaults to the packaged ones.")
@click.option("--workers", type=int, help="Parallel worker count (default 1).")
@click.option("--max-revisions", type=int, help="Revision budget per comment (default 1).")
def grade(corpus_path, out_path, config_path, backend_kind, script_path, base_url,
          model_name, api_key_env, timeout, max_retries, rubric_path, templates_dir,
          workers, max_revisions) -> None:
    """Grade every reflection in CORPUS_PATH and write one result line each."""
    config = _load_config_file(config_path)
    backend_section = dict(config.get("backend", {}))

    def pick(flag, key, fallback=None):
        return flag if flag is not None else backend_section.get(key, fallback)

    kind = backend_kind or backend_section.get("kind")
    if kind is None:
        raise _fail("no backend configured: pass --backend or a config file")
    try:
        backend_config = BackendConfig(
            kind=kind,
            base_url=pick(base_url, "base_url"),
            model_name=pick(model_name, "model_name"),
            api_key_env=pick(api_key_env, "api_key_env", "REFLECTGRADE_API_KEY"),
            timeout=float(pick(timeout, "timeout", 60.0)),
            max_retries=int(pick(max_retries, "max_retries", 3)),
            script_path=pick(script_path, "script_path"),
        )
    except ReflectgradeError as exc:
        raise _fail(str(exc))

    rubric_file = rubric_path or config.get("rubric_path")
    templates_path = templates_dir or config.get("templates_dir")
    n_workers = workers if workers is not None else int(config.get("parallel_workers", 1))
    revision_budget = (
        max_revisions if max_revisions is not None else int(config.get("max_revisions", 1))
    )
    if n_workers < 1:
        raise _fail("--workers must be >= 1")
    if revision_budget < 0:
        raise _fail("--max-revisions must be >= 0")

    _check_writable(out_path)
    try:
        rubric = load_rubric(rubric_file) if rubric_file else DEFAULT_GRADING_RUBRIC
        templates = PromptTemplates.load(templates_path)
        reflections = load_reflections(corpus_path)
        backend = make_backend(backend_config)
    except ReflectgradeError as exc:
        raise _fail(str(exc))

    try:
        outcomes = grade_corpus(
            reflections, rubric, backend,
            parallel_workers=n_workers, max_revisions=revision_budget,
            templates=templates,
        )
    except CorpusGradingError as exc:
        write_results(out_path, exc.outcomes)
        click.echo(f"wrote {len(exc.outcomes)} lines to {out_path} (all failed)", err=True)
        raise SystemExit(EXIT_PARTIAL_FAILURE)

    write_results(out_path, outcomes)
    failures = sum(1 for o in outcomes if isinstance(o, GradeFailure))
    click.echo(
        f"graded {len(outcomes) - failures}/{len(outcomes)} reflections -> {out_path}",
        err=True,
    )
    raise SystemExit(EXIT_PARTIAL_FAILURE if failures else EXIT_OK)


@main.command()
@click.argument("results_path", type=click.Path())
@click.argument("annotations_path", type=click.Path())
@click.option("--reflections", "reflections_path", type=click.Path(),
              help="Reflections JSONL; enables per-class and pooled statistics.")
@click.option("--band-threshold", type=float, default=1.5, show_default=True,
              help="Reflection-mean score below which a reflection is low-band.")
@click.option("--report-json", "json_path", type=click.Path(),
              default="metrics_report.json", show_default=True)
@click.option("--report-csv", "csv_path", type=click.Path(),
              default="metrics_report.csv", show_default=True)
def evaluate(results_path, annotations_path, reflections_path, band_threshold,
             json_path, csv_path) -> None:
    """Compare RESULTS_PATH predictions against ANNOTATIONS_PATH human labels."""
    try:
        rows = read_results(results_path)
        predictions = predictions_from_rows(rows)
        annotations = load_annotations(annotations_path)
        reflections = (
            load_reflections(reflections_path) if reflections_path else None
        )
        report = compute_report(
            annotations, predictions,
            reflections=reflections, band_threshold=band_threshold,
        )
    except ReflectgradeError as exc:
        raise _fail(str(exc))

    try:
        write_report_json(report, json_path)
        write_report_csv(report, csv_path)
    except OSError as exc:
        raise _fail(f"cannot write report: {exc}")
    click.echo(
        f"evaluated {report.n_reflections} reflections "
        f"(MAE {report.mae_overall:.3f}) -> {json_path}, {csv_path}",
        err=True,
    )
    raise SystemExit(EXIT_OK)


@main.command()
@click.argument("results_path", type=click.Path())
@click.option("--preset", type=click.Choice(sorted(PRICE_PRESETS)),
              help="Named price preset.")
@click.option("--input-price", type=str, help="Dollars per million input tokens.")
@click.option("--output-price", type=str, help="Dollars per million output tokens.")
@click.option("--threads", default="1,2,4,8", show_default=True,
              help="Comma-separated thread counts for wall-clock projections.")
@click.option("--out", "out_path", type=click.Path(),
              help="Also write the report as JSON.")
def cost(results_path, preset, input_price, output_price, threads, out_path) -> None:
    """Token cost and latency statistics for a results file."""
    if preset and (input_price or output_price):
        raise _fail("pass either --preset or explicit prices, not both")
    if preset:
        prices = PRICE_PRESETS[preset]
    elif input_price is not None and output_price is not None:
        try:
            prices = PriceSheet(Decimal(input_price), Decimal(output_price))
        except (ReflectgradeError, ArithmeticError) as exc:
            raise _fail(f"bad prices: {exc}")
    else:
        prices = PRICE_PRESETS["gpt-4o-mini-2024-07-18"]

    try:
        thread_counts = tuple(int(t) for t in threads.split(",") if t.strip())
    except ValueError:
        raise _fail(f"bad --threads list: {threads!r}")
    if not thread_counts or any(t < 1 for t in thread_counts):
        raise _fail("thread counts must be positive integers")

    try:
        rows = read_results(results_path)
        usages = usages_from_rows(rows)
        if not usages:
            raise _fail("results contain no usage fields")
        report = build_cost_report(usages, prices, thread_counts or DEFAULT_THREAD_COUNTS)
    except ReflectgradeError as exc:
        raise _fail(str(exc))

    click.echo(f"items:            {report.n_items}")
    click.echo(
        f"cost/reflection:  {format_usd(report.per_reflection_cost)} "
        f"({report.per_reflection_cost})"
    )
    click.echo(f"total cost:       {format_usd(report.total_cost)} ({report.total_cost})")
    click.echo(f"latency:          {format_mean_sd(report.mean_latency, report.latency_sd)}")
    for t in thread_counts:
        seconds = report.projected_wall_clock[t]
        click.echo(f"projected {t:>2} thread(s): {seconds:.1f} s ({seconds / 60:.1f} min)")
    if out_path:
        try:
            Path(out_path).write_text(
                json.dumps(report.to_json_dict(), indent=2) + "\n", encoding="utf-8"
            )
        except OSError as exc:
            raise _fail(f"cannot write report: {exc}")
    raise SystemExit(EXIT_OK)


@main.command()
@click.argument("corpus_path", type=click.Path())
@click.option("--classes", required=True,
              help="Comma-separated class indexes to keep, e.g. 1,6,12.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Sampled reflections JSONL to write.")
def sample(corpus_path, classes, out_path) -> None:
    """Keep only the reflections from the given class sessions."""
    try:
        class_list = [int(c) for c in classes.split(",") if c.strip()]
    except ValueError:
        raise _fail(f"bad --classes list: {classes!r}")
    try:
        corpus = load_reflections(corpus_path)
        sampled = sample_classes(corpus, class_list)
    except ReflectgradeError as exc:
        raise _fail(str(exc))
    try:
        save_reflections(out_path, sampled)
    except OSError as exc:
        raise _fail(f"cannot write output: {exc}")
    click.echo(f"kept {len(sampled)}/{len(corpus)} reflections -> {out_path}", err=True)
    raise SystemExit(EXIT_OK)


@main.command("init-rubric")
@click.option("--dir", "directory", default=".", show_default=True,
              type=click.Path(file_okay=False),
              help="Directory for the rubric files.")
def init_rubric(directory) -> None:
    """Write the built-in grading and feedback rubrics as editable JSON files."""
    target = Path(directory)
    target.mkdir(parents=True, exist_ok=True)
    grading_path = target / "grading_rubric.json"
    feedback_path = target / "feedback_rubric.json"
    grading_path.write_text(serialize_rubric(DEFAULT_GRADING_RUBRIC), encoding="utf-8")
    feedback_path.write_text(
        serialize_feedback_rubric(DEFAULT_FEEDBACK_RUBRIC), encoding="utf-8"
    )
    click.echo(f"wrote {grading_path} and {feedback_path}", err=True)
    raise SystemExit(EXIT_OK)


if __name__ == "__main__":
    main()
