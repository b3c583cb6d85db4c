"""Role-based grading pipeline: fan-out, aggregation, and the revise loop.

Per reflection, three agents run concurrently (Evaluator scores against the
rubric, Equity Monitor audits the narrative, Metacognitive Coach writes
coaching questions), the Aggregator composes a learner-facing comment capped
at 120 words, and the Reflexion Reviewer returns CONFIDENT or REVISE. A
REVISE verdict triggers a bounded number of Aggregator revision calls.

Agents that return malformed output are re-prompted with the parse error
appended, up to two repair attempts per stage. Over-length comments get one
re-prompt with an explicit length instruction and are then truncated at a
sentence boundary as a last resort.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, Sequence

from .backend import ChatBackend, ChatRequest, UsageRecord, accumulate_usage
from .corpus import Reflection
from .errors import (
    CommentLengthError,
    CorpusGradingError,
    ParseError,
    StageError,
)
from .rubric import (
    DIMENSION_ORDER,
    DimensionId,
    GradingRubric,
    ScoreVector,
    render_rubric_prompt,
    validate_scores,
)
from .templates import (
    ROLE_AGGREGATOR,
    ROLE_EQUITY,
    ROLE_EVALUATOR,
    ROLE_METACOGNITIVE,
    ROLE_REFLEXION,
    SYSTEM_PROMPTS,
    PromptTemplates,
)

log = logging.getLogger(__name__)

MAX_COMMENT_WORDS = 120
PARSE_REPAIR_ATTEMPTS = 2
MAX_META_PROMPTS = 2


def count_words(text: str) -> int:
    """Number of maximal runs of non-whitespace characters."""
    return len(text.split())


@dataclass(frozen=True)
class EvaluatorOutput:
    """Structured scoring result: scores, per-dimension reasoning, suggestions."""

    scores: ScoreVector
    reasoning: Mapping[DimensionId, str]
    areas_for_improvement: tuple[str, ...]

    def __post_init__(self):
        for dim in DIMENSION_ORDER:
            if dim not in self.reasoning or not str(self.reasoning[dim]).strip():
                raise ParseError(f"reasoning missing for dimension {dim.value}")
        if not self.areas_for_improvement:
            raise ParseError("areas_for_improvement must be non-empty")


@dataclass(frozen=True)
class EquityFlag:
    span: str
    issue: str


@dataclass(frozen=True)
class EquityReview:
    """Bias audit: flagged spans (possibly none) plus the narrative to use."""

    flags: tuple[EquityFlag, ...]
    revised_narrative: str

    def __post_init__(self):
        if not self.revised_narrative.strip():
            raise ParseError("revised_narrative must be non-empty")


@dataclass(frozen=True)
class MetaPrompts:
    """One or two coaching questions, each ending with a question mark."""

    prompts: tuple[str, ...]

    def __post_init__(self):
        if not 1 <= len(self.prompts) <= MAX_META_PROMPTS:
            raise ParseError(
                f"expected 1..{MAX_META_PROMPTS} prompts, got {len(self.prompts)}"
            )
        for prompt in self.prompts:
            if not prompt.strip().endswith("?"):
                raise ParseError(f"prompt does not end with '?': {prompt!r}")


@dataclass(frozen=True)
class FeedbackComment:
    """Learner-facing comment; the 120-word cap is a hard invariant."""

    text: str
    word_count: int

    def __post_init__(self):
        actual = count_words(self.text)
        if self.word_count != actual:
            raise CommentLengthError(
                f"word_count {self.word_count} does not match text ({actual} words)"
            )
        if self.word_count > MAX_COMMENT_WORDS:
            raise CommentLengthError(
                f"comment is {self.word_count} words; cap is {MAX_COMMENT_WORDS}"
            )

    @classmethod
    def from_text(cls, text: str) -> "FeedbackComment":
        return cls(text=text, word_count=count_words(text))


class VerdictStatus(str, enum.Enum):
    CONFIDENT = "CONFIDENT"
    REVISE = "REVISE"


@dataclass(frozen=True)
class ReflexionVerdict:
    status: VerdictStatus
    suggestions: tuple[str, ...] = ()

    def __post_init__(self):
        if self.status is VerdictStatus.REVISE and not self.suggestions:
            raise ParseError("REVISE verdict requires at least one suggestion")


@dataclass(frozen=True)
class PipelineResult:
    """Everything the pipeline produced for one reflection."""

    reflection_id: str
    evaluator: EvaluatorOutput
    equity: EquityReview
    meta: MetaPrompts
    comment: FeedbackComment
    verdict: ReflexionVerdict
    revisions_applied: int
    usage: UsageRecord
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class GradeFailure:
    """Placeholder result for a reflection whose pipeline run failed."""

    reflection_id: str
    stage: str
    message: str


@dataclass
class StageTrace:
    """Mutable sink for per-call usage and warnings during one pipeline run."""

    usages: list[UsageRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def merge(self, other: "StageTrace") -> None:
        self.usages.extend(other.usages)
        self.warnings.extend(other.warnings)


# ---------------------------------------------------------------------------
# Output parsers
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*|\s*```$")


def _extract_json_object(raw: str) -> dict:
    text = raw.strip()
    if text.startswith("```"):
        text = _FENCE_RE.sub("", text).strip()
    candidates = [text]
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        candidates.append(text[start : end + 1])
    for candidate in candidates:
        try:
            doc = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
        raise ParseError("expected a JSON object", fragment=raw[:200])
    raise ParseError("output is not valid JSON", fragment=raw[:200])


def _require(doc: dict, key: str, raw: str):
    if key not in doc:
        raise ParseError(f"missing field {key!r}", fragment=raw[:200])
    return doc[key]


def parse_evaluator_output(raw: str) -> EvaluatorOutput:
    """Parse the Evaluator JSON: scores, reasoning, areas_for_improvement."""
    doc = _extract_json_object(raw)
    scores_raw = _require(doc, "scores", raw)
    if not isinstance(scores_raw, Mapping):
        raise ParseError("'scores' must be an object", fragment=raw[:200])
    try:
        scores = validate_scores({str(k).lower(): v for k, v in scores_raw.items()})
    except Exception as exc:
        raise ParseError(str(exc), fragment=json.dumps(dict(scores_raw))) from exc
    reasoning_raw = _require(doc, "reasoning", raw)
    if not isinstance(reasoning_raw, Mapping):
        raise ParseError("'reasoning' must be an object", fragment=raw[:200])
    reasoning: dict[DimensionId, str] = {}
    for key, value in reasoning_raw.items():
        try:
            dim = DimensionId(str(key).lower())
        except ValueError:
            raise ParseError(
                f"unknown reasoning dimension {key!r}", fragment=raw[:200]
            ) from None
        reasoning[dim] = str(value)
    areas_raw = _require(doc, "areas_for_improvement", raw)
    if not isinstance(areas_raw, list) or not all(
        isinstance(item, str) and item.strip() for item in areas_raw
    ):
        raise ParseError(
            "'areas_for_improvement' must be a list of non-empty strings",
            fragment=raw[:200],
        )
    return EvaluatorOutput(
        scores=scores,
        reasoning=reasoning,
        areas_for_improvement=tuple(areas_raw),
    )


def parse_equity_output(raw: str, original_narrative: str) -> EquityReview:
    """Parse the Equity Monitor JSON; an empty revision means keep the original."""
    doc = _extract_json_object(raw)
    flags_raw = doc.get("flags", [])
    if not isinstance(flags_raw, list):
        raise ParseError("'flags' must be a list", fragment=raw[:200])
    flags = []
    for item in flags_raw:
        if not isinstance(item, Mapping) or "span" not in item or "issue" not in item:
            raise ParseError(
                "each flag needs 'span' and 'issue'", fragment=raw[:200]
            )
        flags.append(EquityFlag(span=str(item["span"]), issue=str(item["issue"])))
    revised = str(doc.get("revised_narrative", "") or "").strip()
    return EquityReview(
        flags=tuple(flags), revised_narrative=revised or original_narrative
    )


def parse_meta_output(raw: str) -> MetaPrompts:
    """Parse the Metacognitive JSON: a list of 1-2 questions."""
    doc = _extract_json_object(raw)
    prompts_raw = _require(doc, "prompts", raw)
    if not isinstance(prompts_raw, list) or not all(
        isinstance(item, str) for item in prompts_raw
    ):
        raise ParseError("'prompts' must be a list of strings", fragment=raw[:200])
    return MetaPrompts(prompts=tuple(p.strip() for p in prompts_raw))


_STATUS_TOKEN_RE = re.compile(r"[A-Za-z]+")


def parse_reflexion_output(raw: str) -> ReflexionVerdict:
    """Parse the Reflexion verdict.

    Accepts the JSON shape {"status": ..., "suggestions": [...]} as well as a
    bare status token optionally followed by suggestion lines.
    """
    text = raw.strip()
    if not text:
        raise ParseError("empty reflexion output", fragment=raw[:200])
    status_raw: str
    suggestions: list[str]
    try:
        doc = _extract_json_object(text)
        status_raw = str(_require(doc, "status", raw))
        suggestions_raw = doc.get("suggestions", [])
        if not isinstance(suggestions_raw, list):
            raise ParseError("'suggestions' must be a list", fragment=raw[:200])
        suggestions = [str(s) for s in suggestions_raw if str(s).strip()]
    except ParseError:
        match = _STATUS_TOKEN_RE.search(text)
        if match is None:
            raise ParseError("no verdict token found", fragment=raw[:200]) from None
        status_raw = match.group(0)
        rest = text[match.end() :]
        suggestions = [
            line.strip().lstrip("-*• ").strip()
            for line in rest.splitlines()
            if line.strip().lstrip("-*• ").strip()
        ]
    status_token = status_raw.strip().upper()
    try:
        status = VerdictStatus(status_token)
    except ValueError:
        raise ParseError(
            f"unknown verdict {status_raw.strip()!r}", fragment=raw[:200]
        ) from None
    if status is VerdictStatus.CONFIDENT:
        suggestions = []
    return ReflexionVerdict(status=status, suggestions=tuple(suggestions))


# ---------------------------------------------------------------------------
# Stage runners
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def default_templates() -> PromptTemplates:
    return PromptTemplates.load(None)


def _record(trace: StageTrace | None, usage: UsageRecord) -> None:
    if trace is not None:
        trace.usages.append(usage)


def _call_with_repair(backend, request: ChatRequest, parser, stage: str, trace):
    """Call the backend, re-prompting with the parse error up to two times."""
    req = request
    last_error: ParseError | None = None
    for _ in range(1 + PARSE_REPAIR_ATTEMPTS):
        response = backend.complete(req)
        _record(trace, response.usage)
        try:
            return parser(response.text)
        except ParseError as exc:
            last_error = exc
            repair_note = (
                f"\n\nYour previous reply could not be used: {exc}."
                f"\nOffending fragment: {exc.fragment or response.text[:200]}"
                "\nReply again, following the required output shape exactly."
            )
            req = replace(request, user_prompt=request.user_prompt + repair_note)
    raise ParseError(
        f"{stage} output unparseable after {1 + PARSE_REPAIR_ATTEMPTS} attempts: "
        f"{last_error}",
        fragment=last_error.fragment if last_error else "",
    )


def _request(
    role: str, user_prompt: str, script_key: str | None, temperature: float
) -> ChatRequest:
    return ChatRequest(
        role_name=role,
        system_prompt=SYSTEM_PROMPTS[role],
        user_prompt=user_prompt,
        temperature=temperature,
        script_key=script_key,
    )


def run_evaluator(
    reflection: Reflection,
    rubric: GradingRubric,
    backend: ChatBackend,
    templates: PromptTemplates | None = None,
    trace: StageTrace | None = None,
    temperature: float = 0.3,
) -> EvaluatorOutput:
    """Score one reflection against the rubric, repairing malformed replies."""
    templates = templates or default_templates()
    prompt = templates.render(
        ROLE_EVALUATOR,
        rubric=render_rubric_prompt(rubric),
        reflection=reflection.text,
    )
    request = _request(ROLE_EVALUATOR, prompt, reflection.id, temperature)
    return _call_with_repair(
        backend, request, parse_evaluator_output, "evaluator", trace
    )


def run_equity_monitor(
    reflection: Reflection,
    narrative: str,
    backend: ChatBackend,
    templates: PromptTemplates | None = None,
    trace: StageTrace | None = None,
    temperature: float = 0.3,
) -> EquityReview:
    """Audit a narrative for biased or exclusionary phrasing."""
    templates = templates or default_templates()
    prompt = templates.render(ROLE_EQUITY, narrative=narrative)
    request = _request(ROLE_EQUITY, prompt, reflection.id, temperature)
    return _call_with_repair(
        backend,
        request,
        lambda raw: parse_equity_output(raw, narrative),
        "equity_monitor",
        trace,
    )


def run_metacognitive(
    reflection: Reflection,
    backend: ChatBackend,
    templates: PromptTemplates | None = None,
    trace: StageTrace | None = None,
    temperature: float = 0.3,
) -> MetaPrompts:
    """Generate one or two coaching questions for the learner."""
    templates = templates or default_templates()
    prompt = templates.render(ROLE_METACOGNITIVE, reflection=reflection.text)
    request = _request(ROLE_METACOGNITIVE, prompt, reflection.id, temperature)
    return _call_with_repair(backend, request, parse_meta_output, "metacognitive", trace)


def _format_evaluation(evaluation: EvaluatorOutput, rubric: GradingRubric) -> str:
    lines = []
    for dim in rubric.dimensions:
        score = evaluation.scores[dim.id]
        lines.append(f"- {dim.name}: {score}/3. {evaluation.reasoning[dim.id]}")
    lines.append("Areas for improvement:")
    for area in evaluation.areas_for_improvement:
        lines.append(f"- {area}")
    return "\n".join(lines)


def _format_equity(review: EquityReview) -> str:
    if not review.flags:
        return "No phrasing was flagged."
    lines = [f"- flagged {flag.span!r}: {flag.issue}" for flag in review.flags]
    lines.append(f"Revised narrative: {review.revised_narrative}")
    return "\n".join(lines)


def _format_meta(meta: MetaPrompts) -> str:
    return "\n".join(f"{i}. {p}" for i, p in enumerate(meta.prompts, start=1))


def run_aggregator(
    evaluation: EvaluatorOutput,
    equity: EquityReview,
    meta: MetaPrompts,
    backend: ChatBackend,
    rubric: GradingRubric,
    templates: PromptTemplates | None = None,
    trace: StageTrace | None = None,
    script_key: str | None = None,
    revision_of: FeedbackComment | None = None,
    suggestions: Sequence[str] = (),
    temperature: float = 0.3,
) -> FeedbackComment:
    """Compose the learner-facing comment, enforcing the 120-word cap.

    Over-length replies trigger one re-prompt with an explicit length
    instruction; a second over-length reply is truncated at the last sentence
    boundary that keeps the cumulative word count within the cap, with a
    warning recorded in the trace.
    """
    templates = templates or default_templates()
    if revision_of is not None:
        suggestion_lines = "\n".join(f"- {s}" for s in suggestions)
        revision_note = (
            "\nThe previous version of the comment was:\n"
            f"{revision_of.text}\n\n"
            "A reviewer asked for a revision. Address these points while "
            "keeping everything else that works:\n"
            f"{suggestion_lines}"
        )
    else:
        revision_note = ""
    prompt = templates.render(
        ROLE_AGGREGATOR,
        evaluation=_format_evaluation(evaluation, rubric),
        equity_review=_format_equity(equity),
        meta_prompts=_format_meta(meta),
        suggestions=revision_note,
    )
    request = _request(ROLE_AGGREGATOR, prompt, script_key, temperature)

    response = backend.complete(request)
    _record(trace, response.usage)
    text = response.text.strip()
    if not text:
        raise CommentLengthError("aggregator returned an empty comment")
    if count_words(text) <= MAX_COMMENT_WORDS:
        return FeedbackComment.from_text(text)

    length_note = (
        f"\n\nYour previous comment was {count_words(text)} words, which is over "
        f"the limit. Rewrite it in at most {MAX_COMMENT_WORDS} words."
    )
    retry = replace(request, user_prompt=request.user_prompt + length_note)
    response = backend.complete(retry)
    _record(trace, response.usage)
    text = response.text.strip()
    if not text:
        raise CommentLengthError("aggregator returned an empty comment")
    if count_words(text) <= MAX_COMMENT_WORDS:
        return FeedbackComment.from_text(text)

    truncated = _truncate_at_sentence(text, MAX_COMMENT_WORDS)
    if not truncated:
        raise CommentLengthError("empty comment after truncation")
    warning = (
        f"comment truncated from {count_words(text)} to "
        f"{count_words(truncated)} words"
    )
    log.warning("%s", warning)
    if trace is not None:
        trace.warnings.append(warning)
    return FeedbackComment.from_text(truncated)


_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def _truncate_at_sentence(text: str, cap: int) -> str:
    kept: list[str] = []
    words = 0
    for sentence in _SENTENCE_SPLIT_RE.split(text.strip()):
        n = count_words(sentence)
        if n == 0:
            continue
        if words + n > cap:
            break
        kept.append(sentence)
        words += n
    return " ".join(kept)


def run_reflexion(
    comment: FeedbackComment,
    backend: ChatBackend,
    templates: PromptTemplates | None = None,
    trace: StageTrace | None = None,
    script_key: str | None = None,
    temperature: float = 0.3,
) -> ReflexionVerdict:
    """Post-hoc check: CONFIDENT to release, REVISE with suggestions otherwise."""
    templates = templates or default_templates()
    prompt = templates.render(ROLE_REFLEXION, comment=comment.text)
    request = _request(ROLE_REFLEXION, prompt, script_key, temperature)
    return _call_with_repair(backend, request, parse_reflexion_output, "reflexion", trace)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def run_pipeline(
    reflection: Reflection,
    rubric: GradingRubric,
    backend: ChatBackend,
    max_revisions: int = 1,
    templates: PromptTemplates | None = None,
    temperature: float = 0.3,
) -> PipelineResult:
    """Run all five agents for one reflection.

    The Evaluator, Equity Monitor, and Metacognitive stages run concurrently;
    the Equity Monitor audits the reflection's own narrative. The final
    comment is returned regardless of the final verdict once the revision
    budget is spent. Stage failures propagate as StageError with the stage
    name attached.
    """
    if max_revisions < 0:
        raise ValueError("max_revisions must be >= 0")
    templates = templates or default_templates()
    traces = {name: StageTrace() for name in ("evaluator", "equity_monitor", "metacognitive")}

    with ThreadPoolExecutor(max_workers=3) as pool:
        futures = {
            "evaluator": pool.submit(
                run_evaluator, reflection, rubric, backend,
                templates, traces["evaluator"], temperature,
            ),
            "equity_monitor": pool.submit(
                run_equity_monitor, reflection, reflection.text, backend,
                templates, traces["equity_monitor"], temperature,
            ),
            "metacognitive": pool.submit(
                run_metacognitive, reflection, backend,
                templates, traces["metacognitive"], temperature,
            ),
        }
        outputs = {}
        errors = {}
        for name, future in futures.items():
            try:
                outputs[name] = future.result()
            except Exception as exc:  # noqa: BLE001 - reported with stage identity
                errors[name] = exc

    trace = StageTrace()
    for name in ("evaluator", "equity_monitor", "metacognitive"):
        trace.merge(traces[name])
    for name in ("evaluator", "equity_monitor", "metacognitive"):
        if name in errors:
            raise StageError(name, errors[name])

    evaluation: EvaluatorOutput = outputs["evaluator"]
    equity: EquityReview = outputs["equity_monitor"]
    meta: MetaPrompts = outputs["metacognitive"]

    try:
        comment = run_aggregator(
            evaluation, equity, meta, backend, rubric,
            templates=templates, trace=trace, script_key=reflection.id,
            temperature=temperature,
        )
    except Exception as exc:
        raise StageError("aggregator", exc) from exc

    revisions = 0
    verdict = _checked_reflexion(comment, backend, templates, trace, reflection.id, temperature)
    while verdict.status is VerdictStatus.REVISE and revisions < max_revisions:
        try:
            comment = run_aggregator(
                evaluation, equity, meta, backend, rubric,
                templates=templates, trace=trace, script_key=reflection.id,
                revision_of=comment, suggestions=verdict.suggestions,
                temperature=temperature,
            )
        except Exception as exc:
            raise StageError("aggregator", exc) from exc
        revisions += 1
        verdict = _checked_reflexion(
            comment, backend, templates, trace, reflection.id, temperature
        )

    return PipelineResult(
        reflection_id=reflection.id,
        evaluator=evaluation,
        equity=equity,
        meta=meta,
        comment=comment,
        verdict=verdict,
        revisions_applied=revisions,
        usage=accumulate_usage(trace.usages),
        warnings=tuple(trace.warnings),
    )


def _checked_reflexion(comment, backend, templates, trace, script_key, temperature):
    try:
        return run_reflexion(
            comment, backend, templates, trace, script_key, temperature
        )
    except Exception as exc:
        raise StageError("reflexion", exc) from exc


def grade_corpus(
    reflections: Sequence[Reflection],
    rubric: GradingRubric,
    backend: ChatBackend,
    parallel_workers: int = 1,
    max_revisions: int = 1,
    templates: PromptTemplates | None = None,
    temperature: float = 0.3,
) -> list[PipelineResult | GradeFailure]:
    """Grade a corpus with a bounded worker pool.

    Output order always matches input order. A failure in one reflection is
    recorded as a GradeFailure entry and does not stop the run; only a run in
    which every reflection fails raises CorpusGradingError (carrying the
    failure entries).
    """
    if parallel_workers < 1:
        raise ValueError("parallel_workers must be >= 1")
    templates = templates or default_templates()

    def work(reflection: Reflection) -> PipelineResult | GradeFailure:
        try:
            return run_pipeline(
                reflection, rubric, backend,
                max_revisions=max_revisions, templates=templates,
                temperature=temperature,
            )
        except StageError as exc:
            log.error("reflection %s failed at %s: %s", reflection.id, exc.stage, exc.cause)
            return GradeFailure(reflection.id, exc.stage, str(exc.cause))
        except Exception as exc:  # noqa: BLE001 - isolate per reflection
            log.error("reflection %s failed: %s", reflection.id, exc)
            return GradeFailure(reflection.id, "pipeline", str(exc))

    with ThreadPoolExecutor(max_workers=parallel_workers) as pool:
        outcomes = list(pool.map(work, reflections))

    if reflections and all(isinstance(o, GradeFailure) for o in outcomes):
        raise CorpusGradingError(outcomes)
    return outcomes
