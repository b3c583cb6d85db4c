"""Reading and writing the grading-results JSONL files.

One line per reflection. Successful lines carry the documented fields
(reflection_id, scores, reasoning, areas_for_improvement, equity_flags,
meta_prompts, comment, word_count, verdict, revisions_applied, usage);
failed reflections are written as {"reflection_id", "error": {stage, message}}.
No timestamps are embedded, so identical runs produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .backend import UsageRecord
from .errors import CorpusError, ReflectgradeError
from .pipeline import GradeFailure, PipelineResult
from .rubric import DIMENSION_ORDER, ScoreVector, validate_scores


def result_to_dict(result: PipelineResult) -> dict:
    return {
        "reflection_id": result.reflection_id,
        "scores": result.evaluator.scores.as_dict(),
        "reasoning": {
            dim.value: result.evaluator.reasoning[dim] for dim in DIMENSION_ORDER
        },
        "areas_for_improvement": list(result.evaluator.areas_for_improvement),
        "equity_flags": [
            {"span": flag.span, "issue": flag.issue} for flag in result.equity.flags
        ],
        "meta_prompts": list(result.meta.prompts),
        "comment": result.comment.text,
        "word_count": result.comment.word_count,
        "verdict": result.verdict.status.value,
        "revisions_applied": result.revisions_applied,
        "usage": {
            "input_tokens": result.usage.input_tokens,
            "output_tokens": result.usage.output_tokens,
            "latency_s": result.usage.latency,
        },
    }


def failure_to_dict(failure: GradeFailure) -> dict:
    return {
        "reflection_id": failure.reflection_id,
        "error": {"stage": failure.stage, "message": failure.message},
    }


def write_results(
    path: str | Path, outcomes: Sequence[PipelineResult | GradeFailure]
) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for outcome in outcomes:
            if isinstance(outcome, GradeFailure):
                row = failure_to_dict(outcome)
            else:
                row = result_to_dict(outcome)
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_results(path: str | Path) -> list[dict]:
    """Read a results JSONL file into raw row dicts, failures included."""
    path = Path(path)
    if not path.exists():
        raise ReflectgradeError(f"results file not found: {path}")
    rows: list[dict] = []
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReflectgradeError(
                    f"malformed results line {lineno}: {exc}"
                ) from exc
            if not isinstance(row, dict) or "reflection_id" not in row:
                raise ReflectgradeError(
                    f"results line {lineno}: missing reflection_id"
                )
            rows.append(row)
    return rows


def predictions_from_rows(rows: Iterable[dict]) -> dict[str, ScoreVector]:
    """Extract reflection_id -> ScoreVector from result rows, skipping failures."""
    predictions: dict[str, ScoreVector] = {}
    for row in rows:
        if "error" in row or "scores" not in row:
            continue
        rid = str(row["reflection_id"])
        if rid in predictions:
            raise CorpusError(f"duplicate reflection_id {rid!r} in results")
        predictions[rid] = validate_scores(row["scores"])
    return predictions


def usages_from_rows(rows: Iterable[dict]) -> list[UsageRecord]:
    """Extract per-reflection usage records from result rows, skipping failures."""
    usages: list[UsageRecord] = []
    for row in rows:
        usage = row.get("usage")
        if not isinstance(usage, dict):
            continue
        usages.append(
            UsageRecord(
                input_tokens=int(usage.get("input_tokens", 0)),
                output_tokens=int(usage.get("output_tokens", 0)),
                latency=float(usage.get("latency_s", 0.0)),
            )
        )
    return usages
