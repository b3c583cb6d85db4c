"""Deterministic sample data: a demo corpus, a matching backend script, and
a benchmark evaluation fixture with known aggregate statistics.

Everything here is synthetic and fully deterministic (no RNG), so tests and
demos that consume it are reproducible byte for byte. The benchmark fixture
is constructed so its headline statistics are fixed by simple counting
arguments, documented inline; the test suite asserts those values through
the public evaluation path.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from .corpus import AnnotationRecord, Reflection, save_annotations, save_reflections
from .rubric import FEEDBACK_DIMENSION_ORDER, ScoreVector

_TOPICS = (
    "how large language models are trained",
    "prompt design and temperature settings",
    "bias in training data",
    "classification versus generation tasks",
    "evaluating model outputs",
    "retrieval and grounding",
    "fine-tuning versus prompting trade-offs",
)


def sample_corpus(
    n_learners: int = 28, classes: Sequence[int] = tuple(range(1, 13))
) -> list[Reflection]:
    """A deterministic synthetic corpus: one reflection per learner per class."""
    reflections = []
    for class_index in classes:
        for learner in range(1, n_learners + 1):
            topic = _TOPICS[(class_index + learner) % len(_TOPICS)]
            reflections.append(
                Reflection(
                    id=f"r{class_index:02d}-{learner:02d}",
                    learner_id=f"s{learner:02d}",
                    class_index=class_index,
                    text=(
                        f"This week I learned about {topic}. I can see using this "
                        f"at work when summarizing reports. My open question is "
                        f"how reliable it is on edge cases."
                    ),
                )
            )
    return reflections


def sample_script(reflections: Sequence[Reflection]) -> dict:
    """A scripted-backend table that grades the given corpus happily.

    Every reflection gets a valid Evaluator reply, a no-flag equity review,
    two coaching prompts, a short comment, and a CONFIDENT verdict. Scores
    vary deterministically with the reflection index.
    """
    script: dict = {}
    for index, reflection in enumerate(reflections):
        scores = {
            "cu": (index + 2) % 4,
            "rwa": (index + 1) % 4,
            "rq": index % 4,
            "cc": (index + 3) % 4,
        }
        script[f"Evaluator/{reflection.id}"] = {
            "text": json.dumps(
                {
                    "scores": scores,
                    "reasoning": {
                        "cu": "Names the concept and explains it in outline.",
                        "rwa": "Mentions one workplace use without detail.",
                        "rq": "Poses a genuine open question.",
                        "cc": "Readable with minor rough edges.",
                    },
                    "areas_for_improvement": [
                        "Work one concrete example into the application paragraph."
                    ],
                }
            ),
            "input_tokens": 350,
            "output_tokens": 120,
        }
        script[f"EquityMonitor/{reflection.id}"] = {
            "text": json.dumps({"flags": [], "revised_narrative": ""}),
            "input_tokens": 180,
            "output_tokens": 40,
        }
        script[f"Metacognitive/{reflection.id}"] = {
            "text": json.dumps(
                {
                    "prompts": [
                        "What made the edge cases feel unreliable to you?",
                        "Which part of your summary workflow would you automate first?",
                    ]
                }
            ),
            "input_tokens": 150,
            "output_tokens": 35,
        }
        script[f"Aggregator/{reflection.id}"] = {
            "text": (
                "You clearly picked up the week's main idea and connected it to "
                "your own reporting work, which is exactly the right instinct. "
                "To push further, ground the application in one concrete "
                "example: walk through a single report you would summarize and "
                "what you would check by hand. Your question about edge cases "
                "is a good one to chase. What made the edge cases feel "
                "unreliable to you?"
            ),
            "input_tokens": 420,
            "output_tokens": 90,
        }
        script[f"Reflexion/{reflection.id}"] = {
            "text": json.dumps({"status": "CONFIDENT", "suggestions": []}),
            "input_tokens": 130,
            "output_tokens": 12,
        }
    return script


# ---------------------------------------------------------------------------
# Benchmark evaluation fixture
# ---------------------------------------------------------------------------

# 84 reflections: 28 learners x classes {1, 6, 12}. Within each class the
# first 4 learners form the low band (reference scores all 1, mean 1.0) and
# the remaining 24 the high band (all 2, mean 2.0). Per-dimension prediction
# errors are all of magnitude <= 2 and are counted explicitly below, so the
# aggregate statistics follow by arithmetic:
#
#   low-band error sums   cu=12 rwa=18 rq=11 cc=2   over 12 reflections
#   high-band error sums  cu=20 rwa=29 rq=31 cc=34  over 72 reflections
#
#   MAE per dim   = (low + high) / 84 -> 32/84, 47/84, 42/84, 36/84
#   MAE overall   = 157/336
#   band MAE      = 43/48 (low), 114/288 (high); gap exactly 0.5
#   band counts   = 48 low scores, 288 high scores
#
# Quality ratings: 3 graders x 84 comments = 252 ratings per dimension with
# per-dimension sums {correctness: 1028, alignment: 989, actionability: 948,
# depth: 969, empathy: 1064}, so Q(g) = 4998/1260 and the empathy mean is
# 1064/252.

BENCHMARK_CLASSES = (1, 6, 12)
BENCHMARK_LEARNERS = 28
_LOW_PER_CLASS = 4
_LOW_ERRORS = {"cu": 12, "rwa": (6, 6), "rq": 11, "cc": 2}
_HIGH_CU = 20
_HIGH_RWA = (20, 49)
_HIGH_RQ = (41, 72)
_HIGH_CC = ((0, 17), (55, 72))
_QUALITY_SUMS = {
    "correctness": 1028,
    "alignment": 989,
    "actionability": 948,
    "depth": 969,
    "empathy": 1064,
}

BENCHMARK_EXPECTED = {
    "mae_per_dimension": {
        "cu": 32 / 84,
        "rwa": 47 / 84,
        "rq": 42 / 84,
        "cc": 36 / 84,
    },
    "mae_overall": 157 / 336,
    "band_mae_low": 43 / 48,
    "band_mae_high": 114 / 288,
    "delta_mae": 0.5,
    "low_scores": 48,
    "high_scores": 288,
    "q_of_g": 4998 / 1260,
    "empathy_mean": 1064 / 252,
}


def benchmark_fixture() -> tuple[
    list[Reflection], dict[str, ScoreVector], dict[str, ScoreVector], list[AnnotationRecord]
]:
    """Build the fixture: (reflections, reference, predictions, annotations)."""
    reflections = sample_corpus(BENCHMARK_LEARNERS, BENCHMARK_CLASSES)
    reference: dict[str, ScoreVector] = {}
    predictions: dict[str, ScoreVector] = {}
    low_ids: list[str] = []
    high_ids: list[str] = []
    for reflection in reflections:
        learner = int(reflection.learner_id[1:])
        if learner <= _LOW_PER_CLASS:
            low_ids.append(reflection.id)
        else:
            high_ids.append(reflection.id)

    for i, rid in enumerate(low_ids):
        reference[rid] = ScoreVector(1, 1, 1, 1)
        rwa_big, _ = _LOW_ERRORS["rwa"]
        predictions[rid] = ScoreVector(
            cu=2,
            rwa=3 if i < rwa_big else 2,
            rq=2 if i < _LOW_ERRORS["rq"] else 1,
            cc=2 if i < _LOW_ERRORS["cc"] else 1,
        )

    for i, rid in enumerate(high_ids):
        reference[rid] = ScoreVector(2, 2, 2, 2)
        predictions[rid] = ScoreVector(
            cu=3 if i < _HIGH_CU else 2,
            rwa=1 if _HIGH_RWA[0] <= i < _HIGH_RWA[1] else 2,
            rq=3 if _HIGH_RQ[0] <= i < _HIGH_RQ[1] else 2,
            cc=1 if (_HIGH_CC[0][0] <= i < _HIGH_CC[0][1])
            or (_HIGH_CC[1][0] <= i < _HIGH_CC[1][1]) else 2,
        )

    annotations: list[AnnotationRecord] = []
    for reflection in reflections:
        for annotator in ("a1", "a2", "a3"):
            annotations.append(
                AnnotationRecord(
                    annotator_id=annotator,
                    reflection_id=reflection.id,
                    kind="grading",
                    grading_scores=reference[reflection.id],
                )
            )

    quality_table: dict = {}
    n_slots = 3 * len(reflections)
    for dim in FEEDBACK_DIMENSION_ORDER:
        base, remainder = divmod(_QUALITY_SUMS[dim.value], n_slots)
        quality_table[dim] = [
            base + 1 if slot < remainder else base for slot in range(n_slots)
        ]

    for comment_index, reflection in enumerate(reflections):
        for grader_index, annotator in enumerate(("a1", "a2", "a3")):
            slot = comment_index * 3 + grader_index
            annotations.append(
                AnnotationRecord(
                    annotator_id=annotator,
                    reflection_id=reflection.id,
                    kind="feedback_quality",
                    quality_ratings={
                        dim: quality_table[dim][slot]
                        for dim in FEEDBACK_DIMENSION_ORDER
                    },
                )
            )

    return reflections, reference, predictions, annotations


_FIXTURE_COMMENT = (
    "You explained the core idea clearly and tied it to a realistic use at "
    "work. Next time, anchor the application with one concrete example and "
    "say what you would verify by hand. What part of the workflow would you "
    "test first?"
)


def write_benchmark_files(directory: str | Path) -> dict[str, Path]:
    """Write the fixture as the three batch-run input files.

    Produces reflections JSONL, a grading-results JSONL holding the fixture
    predictions (with the package's reference usage numbers: 1216 input
    tokens, 2283 output tokens, 7.71 s per reflection), and the annotations
    CSV. Returns the paths keyed by role.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    reflections, _, predictions, annotations = benchmark_fixture()

    reflections_path = directory / "reflections.jsonl"
    save_reflections(reflections_path, reflections)

    results_path = directory / "results.jsonl"
    with results_path.open("w", encoding="utf-8") as handle:
        for reflection in reflections:
            row = {
                "reflection_id": reflection.id,
                "scores": predictions[reflection.id].as_dict(),
                "reasoning": {
                    "cu": "Scored by fixture construction.",
                    "rwa": "Scored by fixture construction.",
                    "rq": "Scored by fixture construction.",
                    "cc": "Scored by fixture construction.",
                },
                "areas_for_improvement": ["Add one concrete example."],
                "equity_flags": [],
                "meta_prompts": ["What part of the workflow would you test first?"],
                "comment": _FIXTURE_COMMENT,
                "word_count": len(_FIXTURE_COMMENT.split()),
                "verdict": "CONFIDENT",
                "revisions_applied": 0,
                "usage": {
                    "input_tokens": 1216,
                    "output_tokens": 2283,
                    "latency_s": 7.71,
                },
            }
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")

    annotations_path = directory / "annotations.csv"
    save_annotations(annotations_path, annotations)

    return {
        "reflections": reflections_path,
        "results": results_path,
        "annotations": annotations_path,
    }
