"""Reflection and annotation ingestion, sampling, and consensus building.

Reflections arrive as JSONL (one object per line); human annotations arrive
as a single CSV export covering both grading scores and feedback-quality
ratings. Loaded collections are immutable and safe to share across workers.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CorpusError, RubricError
from .rubric import (
    FEEDBACK_DIMENSION_ORDER,
    RATING_MAX,
    RATING_MIN,
    FeedbackDimensionId,
    ScoreVector,
    validate_scores,
)

CLASS_MIN = 1
CLASS_MAX = 12

ANNOTATION_HEADER = (
    "annotator_id",
    "reflection_id",
    "kind",
    "cu",
    "rwa",
    "rq",
    "cc",
    "correctness",
    "alignment",
    "actionability",
    "depth",
    "empathy",
)


@dataclass(frozen=True)
class Reflection:
    """One learner-written reflection with its learner and class identity."""

    id: str
    learner_id: str
    class_index: int
    text: str

    def __post_init__(self):
        if not self.id:
            raise CorpusError("reflection id must be non-empty")
        if not self.text:
            raise CorpusError(f"reflection {self.id}: empty text")
        if not CLASS_MIN <= self.class_index <= CLASS_MAX:
            raise CorpusError(
                f"reflection {self.id}: class {self.class_index} out of range "
                f"{CLASS_MIN}..{CLASS_MAX}"
            )


@dataclass(frozen=True)
class AnnotationRecord:
    """One human judgment: either grading scores or feedback-quality ratings."""

    annotator_id: str
    reflection_id: str
    kind: str  # "grading" | "feedback_quality"
    grading_scores: ScoreVector | None = None
    quality_ratings: Mapping[FeedbackDimensionId, int] | None = None

    def __post_init__(self):
        if self.kind not in ("grading", "feedback_quality"):
            raise CorpusError(f"unknown annotation kind {self.kind!r}")
        if self.kind == "grading":
            if self.grading_scores is None or self.quality_ratings is not None:
                raise CorpusError("grading annotation must carry scores only")
        else:
            if self.quality_ratings is None or self.grading_scores is not None:
                raise CorpusError("feedback_quality annotation must carry ratings only")
            for dim in FEEDBACK_DIMENSION_ORDER:
                if dim not in self.quality_ratings:
                    raise CorpusError(f"missing rating for {dim.value}")
                value = self.quality_ratings[dim]
                if isinstance(value, bool) or not isinstance(value, int):
                    raise CorpusError(f"rating for {dim.value} must be an integer")
                if not RATING_MIN <= value <= RATING_MAX:
                    raise CorpusError(
                        f"rating out of range: {dim.value}={value} "
                        f"(expected {RATING_MIN}..{RATING_MAX})"
                    )


@dataclass(frozen=True)
class EvaluationSet:
    """Joined view of reflections, annotations, and optional model predictions."""

    reflections: tuple[Reflection, ...]
    annotations: tuple[AnnotationRecord, ...]
    predictions: Mapping[str, ScoreVector] | None = None

    def __post_init__(self):
        known = {r.id for r in self.reflections}
        for record in self.annotations:
            if record.reflection_id not in known:
                raise CorpusError(
                    f"dangling reflection_id {record.reflection_id!r} in annotations"
                )

    def reflection_by_id(self) -> dict[str, Reflection]:
        return {r.id: r for r in self.reflections}

    def grading_by_reflection(self) -> dict[str, list[AnnotationRecord]]:
        out: dict[str, list[AnnotationRecord]] = {}
        for record in self.annotations:
            if record.kind == "grading":
                out.setdefault(record.reflection_id, []).append(record)
        return out

    def quality_by_reflection(self) -> dict[str, list[AnnotationRecord]]:
        out: dict[str, list[AnnotationRecord]] = {}
        for record in self.annotations:
            if record.kind == "feedback_quality":
                out.setdefault(record.reflection_id, []).append(record)
        return out

    def consensus_scores(self) -> dict[str, ScoreVector]:
        """Majority-vote reference score per reflection.

        Reflections with a single grader use that grader's scores directly;
        reflections with no grading annotations are omitted.
        """
        out: dict[str, ScoreVector] = {}
        for rid, records in self.grading_by_reflection().items():
            vectors = [r.grading_scores for r in records]
            out[rid] = vectors[0] if len(vectors) == 1 else majority_vote(vectors)
        return out


def load_reflections(path: str | Path) -> list[Reflection]:
    """Load a JSONL reflections file, preserving order.

    Errors report the 1-based line number: malformed JSON, missing fields,
    duplicate ids, empty text, class index out of range.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"reflections file not found: {path}")
    reflections: list[Reflection] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"malformed JSON at line {lineno}: {exc}") from exc
            try:
                reflection = Reflection(
                    id=str(obj["id"]),
                    learner_id=str(obj["learner_id"]),
                    class_index=int(obj["class_index"]),
                    text=str(obj["text"]),
                )
            except KeyError as exc:
                raise CorpusError(f"missing field {exc} at line {lineno}") from exc
            except (TypeError, ValueError) as exc:
                raise CorpusError(f"bad field at line {lineno}: {exc}") from exc
            except CorpusError as exc:
                raise CorpusError(f"{exc} (line {lineno})") from exc
            if reflection.id in seen:
                raise CorpusError(f"duplicate id {reflection.id!r} at line {lineno}")
            seen.add(reflection.id)
            reflections.append(reflection)
    return reflections


def save_reflections(path: str | Path, reflections: Iterable[Reflection]) -> None:
    """Write reflections back out as JSONL, one object per line."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for r in reflections:
            handle.write(
                json.dumps(
                    {
                        "id": r.id,
                        "learner_id": r.learner_id,
                        "class_index": r.class_index,
                        "text": r.text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def sample_classes(
    corpus: Sequence[Reflection], classes: Iterable[int]
) -> list[Reflection]:
    """Keep exactly the reflections whose class_index is in `classes`, stable order."""
    wanted = set(classes)
    bad = [c for c in wanted if not CLASS_MIN <= c <= CLASS_MAX]
    if bad:
        raise CorpusError(
            f"class out of range: {sorted(bad)[0]} (expected {CLASS_MIN}..{CLASS_MAX})"
        )
    return [r for r in corpus if r.class_index in wanted]


def majority_vote(scores: Sequence[ScoreVector]) -> ScoreVector:
    """Per-dimension consensus across annotators: mode, median on full ties.

    Requires at least two score vectors. When no single value has a strict
    plurality, the integer median of the votes is used (the lower middle vote
    when the exact median falls between two integers), which keeps the result
    ordinal and minimizes L1 deviation from the votes.
    """
    if len(scores) < 2:
        raise CorpusError(f"majority vote needs >= 2 annotations, got {len(scores)}")
    consensus = []
    for values in zip(*(v.values() for v in scores)):
        consensus.append(_vote(values))
    return ScoreVector(*consensus)


def _vote(values: Sequence[int]) -> int:
    counts: dict[int, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    if len(ranked) == 1 or ranked[0][1] > ranked[1][1]:
        return ranked[0][0]
    ordered = sorted(values)
    mid, rem = divmod(len(ordered), 2)
    if rem == 1:
        return ordered[mid]
    low, high = ordered[mid - 1], ordered[mid]
    return low if (low + high) % 2 else (low + high) // 2


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    """Load the annotations CSV.

    Grading rows fill cu..cc and leave the quality columns blank; quality rows
    do the opposite. The header must match ANNOTATION_HEADER exactly.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"annotations file not found: {path}")
    records: list[AnnotationRecord] = []
    with path.open(encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusError("annotations file is empty") from None
        if tuple(h.strip() for h in header) != ANNOTATION_HEADER:
            raise CorpusError(
                f"unknown header {header!r}; expected {','.join(ANNOTATION_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not any(cell.strip() for cell in row):
                continue
            if len(row) != len(ANNOTATION_HEADER):
                raise CorpusError(
                    f"line {lineno}: expected {len(ANNOTATION_HEADER)} columns, "
                    f"got {len(row)}"
                )
            records.append(_parse_annotation_row(row, lineno))
    return records


def _parse_annotation_row(row: Sequence[str], lineno: int) -> AnnotationRecord:
    annotator_id, reflection_id, kind = (cell.strip() for cell in row[:3])
    grading_cells = [cell.strip() for cell in row[3:7]]
    quality_cells = [cell.strip() for cell in row[7:12]]
    try:
        if kind == "grading":
            if any(quality_cells):
                raise CorpusError("grading row has quality columns filled")
            scores = validate_scores(
                {
                    dim: _int_cell(cell, name=dim)
                    for dim, cell in zip(("cu", "rwa", "rq", "cc"), grading_cells)
                }
            )
            return AnnotationRecord(
                annotator_id=annotator_id,
                reflection_id=reflection_id,
                kind="grading",
                grading_scores=scores,
            )
        if kind == "feedback_quality":
            if any(grading_cells):
                raise CorpusError("quality row has grading columns filled")
            ratings = {
                dim: _int_cell(cell, name=dim.value)
                for dim, cell in zip(FEEDBACK_DIMENSION_ORDER, quality_cells)
            }
            return AnnotationRecord(
                annotator_id=annotator_id,
                reflection_id=reflection_id,
                kind="feedback_quality",
                quality_ratings=ratings,
            )
        raise CorpusError(f"unknown annotation kind {kind!r}")
    except (CorpusError, RubricError) as exc:
        raise CorpusError(f"line {lineno}: {exc}") from exc


def _int_cell(cell: str, name: str) -> int:
    if not cell:
        raise CorpusError(f"missing value for {name}")
    try:
        return int(cell)
    except ValueError:
        raise CorpusError(f"non-integer value for {name}: {cell!r}") from None


def save_annotations(path: str | Path, records: Iterable[AnnotationRecord]) -> None:
    """Write annotations back out in the documented CSV layout."""
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(ANNOTATION_HEADER)
        for record in records:
            if record.kind == "grading":
                grading = [str(v) for v in record.grading_scores.values()]
                quality = [""] * 5
            else:
                grading = [""] * 4
                quality = [
                    str(record.quality_ratings[dim])
                    for dim in FEEDBACK_DIMENSION_ORDER
                ]
            writer.writerow(
                [record.annotator_id, record.reflection_id, record.kind]
                + grading
                + quality
            )
