"""Grading and feedback-quality rubrics: validation, serialization, prompt text.

Two rubrics are built in: a four-dimension grading rubric scored 0-3 per
dimension, and a five-dimension feedback-quality rubric rated 1-5. Both can
also be loaded from JSON documents so deployments can reword descriptors
without touching code.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import RubricError

SCORE_MIN = 0
SCORE_MAX = 3
RATING_MIN = 1
RATING_MAX = 5


class DimensionId(str, enum.Enum):
    """The four scored dimensions, in fixed report/column order."""

    CONCEPT_UNDERSTANDING = "cu"
    REAL_WORLD_APPLICATION = "rwa"
    REFLECTION_QUESTIONS = "rq"
    CLARITY_COMMUNICATION = "cc"


class FeedbackDimensionId(str, enum.Enum):
    """The five feedback-quality dimensions, in fixed order."""

    CORRECTNESS = "correctness"
    ALIGNMENT = "alignment"
    ACTIONABILITY = "actionability"
    DEPTH = "depth"
    EMPATHY = "empathy"


DIMENSION_ORDER = tuple(DimensionId)
FEEDBACK_DIMENSION_ORDER = tuple(FeedbackDimensionId)


@dataclass(frozen=True)
class RubricDimension:
    """One scored dimension: display name plus level descriptors indexed 0..3."""

    id: DimensionId
    name: str
    levels: tuple[str, str, str, str]

    def __post_init__(self):
        if not self.name.strip():
            raise RubricError(f"dimension {self.id.value}: empty name")
        if len(self.levels) != 4:
            raise RubricError(
                f"dimension {self.id.value}: level count {len(self.levels)} != 4"
            )
        for score, text in enumerate(self.levels):
            if not isinstance(text, str) or not text.strip():
                raise RubricError(
                    f"dimension {self.id.value}: empty descriptor for score {score}"
                )


@dataclass(frozen=True)
class GradingRubric:
    """All four dimensions, stored in canonical order."""

    dimensions: tuple[RubricDimension, ...]

    def __post_init__(self):
        ids = [d.id for d in self.dimensions]
        if len(set(ids)) != len(ids):
            raise RubricError("duplicate dimension id")
        if len(ids) != len(DIMENSION_ORDER):
            raise RubricError(
                f"dimension count {len(ids)} != {len(DIMENSION_ORDER)}"
            )
        if tuple(ids) != DIMENSION_ORDER:
            ordered = tuple(
                sorted(self.dimensions, key=lambda d: DIMENSION_ORDER.index(d.id))
            )
            object.__setattr__(self, "dimensions", ordered)

    def __getitem__(self, dim: DimensionId) -> RubricDimension:
        return self.dimensions[DIMENSION_ORDER.index(dim)]


@dataclass(frozen=True)
class FeedbackDimension:
    """One feedback-quality criterion rated on a 1-5 scale."""

    id: FeedbackDimensionId
    criterion: str

    def __post_init__(self):
        if not self.criterion.strip():
            raise RubricError(f"feedback dimension {self.id.value}: empty criterion")


@dataclass(frozen=True)
class FeedbackRubric:
    """All five feedback-quality dimensions plus the shared rating scale."""

    dimensions: tuple[FeedbackDimension, ...]
    scale_min: int = RATING_MIN
    scale_max: int = RATING_MAX

    def __post_init__(self):
        ids = [d.id for d in self.dimensions]
        if len(set(ids)) != len(ids):
            raise RubricError("duplicate feedback dimension id")
        if len(ids) != len(FEEDBACK_DIMENSION_ORDER):
            raise RubricError(
                f"feedback dimension count {len(ids)} != {len(FEEDBACK_DIMENSION_ORDER)}"
            )
        if (self.scale_min, self.scale_max) != (RATING_MIN, RATING_MAX):
            raise RubricError(
                f"rating scale must be {RATING_MIN}..{RATING_MAX}, "
                f"got {self.scale_min}..{self.scale_max}"
            )
        if tuple(ids) != FEEDBACK_DIMENSION_ORDER:
            ordered = tuple(
                sorted(
                    self.dimensions,
                    key=lambda d: FEEDBACK_DIMENSION_ORDER.index(d.id),
                )
            )
            object.__setattr__(self, "dimensions", ordered)


@dataclass(frozen=True)
class ScoreVector:
    """One integer score in 0..3 per dimension, in canonical order."""

    cu: int
    rwa: int
    rq: int
    cc: int

    def __post_init__(self):
        for dim, value in zip(DIMENSION_ORDER, self.values()):
            if isinstance(value, bool) or not isinstance(value, int):
                raise RubricError(f"dimension {dim.value}: score must be an integer")
            if not SCORE_MIN <= value <= SCORE_MAX:
                raise RubricError(
                    f"dimension {dim.value}: score {value} out of range "
                    f"{SCORE_MIN}..{SCORE_MAX}"
                )

    def values(self) -> tuple[int, int, int, int]:
        return (self.cu, self.rwa, self.rq, self.cc)

    def __getitem__(self, dim: DimensionId) -> int:
        return self.values()[DIMENSION_ORDER.index(dim)]

    def as_dict(self) -> dict[str, int]:
        return {dim.value: score for dim, score in zip(DIMENSION_ORDER, self.values())}

    @classmethod
    def from_mapping(cls, raw: Mapping) -> "ScoreVector":
        return validate_scores(raw)

    def mean(self) -> float:
        return sum(self.values()) / len(DIMENSION_ORDER)


def validate_scores(raw: Mapping) -> ScoreVector:
    """Check a raw score map and return a ScoreVector.

    Accepts keys that are DimensionId members or their string values
    ("cu", "rwa", "rq", "cc"). All four dimensions must be present with
    integer scores in 0..3; anything else raises RubricError.
    """
    normalized: dict[str, int] = {}
    for key, value in raw.items():
        name = key.value if isinstance(key, DimensionId) else str(key)
        normalized[name] = value
    known = {dim.value for dim in DIMENSION_ORDER}
    unknown = set(normalized) - known
    if unknown:
        raise RubricError(f"unknown dimension {sorted(unknown)[0]!r}")
    missing = [dim.value for dim in DIMENSION_ORDER if dim.value not in normalized]
    if missing:
        raise RubricError(f"missing dimension {missing[0]}")
    return ScoreVector(*(normalized[dim.value] for dim in DIMENSION_ORDER))


DEFAULT_GRADING_RUBRIC = GradingRubric(
    dimensions=(
        RubricDimension(
            id=DimensionId.CONCEPT_UNDERSTANDING,
            name="Concept Understanding",
            levels=(
                "Missing or off-topic",
                "Partial/confused",
                "Mostly clear",
                "Accurate, nuanced explanation",
            ),
        ),
        RubricDimension(
            id=DimensionId.REAL_WORLD_APPLICATION,
            name="Real-World Application",
            levels=(
                "None",
                "Vague",
                "Reasonable or generic",
                "Specific, thoughtful",
            ),
        ),
        RubricDimension(
            id=DimensionId.REFLECTION_QUESTIONS,
            name="Reflection Questions",
            levels=(
                "None",
                "Surface-level",
                "Identifies a question",
                "Insightful question or challenge",
            ),
        ),
        RubricDimension(
            id=DimensionId.CLARITY_COMMUNICATION,
            name="Clarity & Communication",
            levels=(
                "Incoherent",
                "Hard to follow",
                "Minor issues",
                "Clear, polished",
            ),
        ),
    )
)

DEFAULT_FEEDBACK_RUBRIC = FeedbackRubric(
    dimensions=(
        FeedbackDimension(
            id=FeedbackDimensionId.CORRECTNESS,
            criterion="Factually accurate; avoids hallucinations.",
        ),
        FeedbackDimension(
            id=FeedbackDimensionId.ALIGNMENT,
            criterion="Closely reflects the official grading criteria.",
        ),
        FeedbackDimension(
            id=FeedbackDimensionId.ACTIONABILITY,
            criterion="Offers specific, constructive suggestions for improvement.",
        ),
        FeedbackDimension(
            id=FeedbackDimensionId.DEPTH,
            criterion="Demonstrates nuanced, critical understanding.",
        ),
        FeedbackDimension(
            id=FeedbackDimensionId.EMPATHY,
            criterion="Supportive, respectful, and learner-appropriate.",
        ),
    )
)


def serialize_rubric(rubric: GradingRubric) -> str:
    """Canonical JSON for a grading rubric; load_rubric inverts it exactly."""
    doc = {
        "dimensions": [
            {"id": d.id.value, "name": d.name, "levels": list(d.levels)}
            for d in rubric.dimensions
        ]
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def serialize_feedback_rubric(rubric: FeedbackRubric) -> str:
    doc = {
        "dimensions": [
            {"id": d.id.value, "criterion": d.criterion} for d in rubric.dimensions
        ],
        "scale": {"min": rubric.scale_min, "max": rubric.scale_max},
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def _read_json_document(path: Path) -> dict:
    if not path.exists():
        raise RubricError(f"rubric file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RubricError(f"rubric file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("dimensions"), list):
        raise RubricError(f"rubric file {path}: missing top-level 'dimensions' array")
    return doc


def load_rubric(path: str | Path) -> GradingRubric:
    """Load and validate a grading rubric document.

    Schema: {"dimensions": [{"id": str, "name": str, "levels": [str x4]}]}.
    """
    path = Path(path)
    doc = _read_json_document(path)
    entries = doc["dimensions"]
    if len(entries) != len(DIMENSION_ORDER):
        raise RubricError(f"dimension count {len(entries)} != {len(DIMENSION_ORDER)}")
    dims = []
    for entry in entries:
        dim_id = _parse_enum(DimensionId, entry.get("id"), "dimension id")
        levels = entry.get("levels")
        if not isinstance(levels, list):
            raise RubricError(f"dimension {dim_id.value}: missing 'levels' array")
        if len(levels) > 4:
            raise RubricError(
                f"dimension {dim_id.value}: score out of range "
                f"(level defined for score {len(levels) - 1}, max is {SCORE_MAX})"
            )
        if len(levels) < 4:
            raise RubricError(
                f"dimension {dim_id.value}: level count {len(levels)} != 4"
            )
        dims.append(
            RubricDimension(id=dim_id, name=str(entry.get("name", "")), levels=tuple(levels))
        )
    return GradingRubric(dimensions=tuple(dims))


def load_feedback_rubric(path: str | Path) -> FeedbackRubric:
    """Load the feedback-quality rubric; scale must be exactly 1..5."""
    path = Path(path)
    doc = _read_json_document(path)
    entries = doc["dimensions"]
    if len(entries) != len(FEEDBACK_DIMENSION_ORDER):
        raise RubricError(
            f"feedback dimension count {len(entries)} != {len(FEEDBACK_DIMENSION_ORDER)}"
        )
    dims = []
    for entry in entries:
        dim_id = _parse_enum(FeedbackDimensionId, entry.get("id"), "feedback dimension id")
        dims.append(FeedbackDimension(id=dim_id, criterion=str(entry.get("criterion", ""))))
    scale = doc.get("scale", {"min": RATING_MIN, "max": RATING_MAX})
    return FeedbackRubric(
        dimensions=tuple(dims),
        scale_min=int(scale.get("min", RATING_MIN)),
        scale_max=int(scale.get("max", RATING_MAX)),
    )


def _parse_enum(enum_cls, raw, what: str):
    try:
        return enum_cls(raw)
    except ValueError:
        raise RubricError(f"unknown {what}: {raw!r}") from None


def render_rubric_prompt(rubric: GradingRubric) -> str:
    """Deterministic prompt text listing every dimension and level descriptor.

    Pure function: identical rubrics produce byte-identical output. Level
    descriptors are listed high-to-low, the way graders read rubric tables.
    """
    lines = ["Scoring rubric (award one integer score per dimension):", ""]
    for position, dim in enumerate(rubric.dimensions, start=1):
        lines.append(f"{position}. {dim.name} [{dim.id.value}]")
        for score in range(SCORE_MAX, SCORE_MIN - 1, -1):
            lines.append(f"   {score}: {dim.levels[score]}")
        lines.append("")
    return "\n".join(lines)


def render_feedback_rubric_prompt(rubric: FeedbackRubric) -> str:
    lines = [
        f"Feedback quality criteria (rate {rubric.scale_min} = poor "
        f"to {rubric.scale_max} = excellent):",
        "",
    ]
    for dim in rubric.dimensions:
        lines.append(f"- {dim.id.value}: {dim.criterion}")
    lines.append("")
    return "\n".join(lines)
