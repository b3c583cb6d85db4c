"""Shared fixtures and scripted-backend helpers."""

from __future__ import annotations

import json

import pytest

from reflectgrade.backend import ScriptedBackend
from reflectgrade.corpus import Reflection
from reflectgrade.rubric import DEFAULT_GRADING_RUBRIC


@pytest.fixture
def rubric():
    return DEFAULT_GRADING_RUBRIC


def make_reflection(rid: str = "r1", class_index: int = 1) -> Reflection:
    return Reflection(
        id=rid,
        learner_id="s1",
        class_index=class_index,
        text="I learned about model evaluation and want to try it at work.",
    )


def evaluator_json(cu=2, rwa=3, rq=1, cc=2) -> str:
    return json.dumps(
        {
            "scores": {"cu": cu, "rwa": rwa, "rq": rq, "cc": cc},
            "reasoning": {
                "cu": "Clear outline of the concept.",
                "rwa": "Specific workplace example.",
                "rq": "Surface-level question only.",
                "cc": "Minor issues with flow.",
            },
            "areas_for_improvement": ["Sharpen the open question."],
        }
    )


def equity_json(flags=(), revised="") -> str:
    return json.dumps({"flags": list(flags), "revised_narrative": revised})


def meta_json(prompts=("What assumption would you test first?",)) -> str:
    return json.dumps({"prompts": list(prompts)})


def reflexion_json(status="CONFIDENT", suggestions=()) -> str:
    return json.dumps({"status": status, "suggestions": list(suggestions)})


def words(n: int, sentence_len: int = 10) -> str:
    """n words with a period closing every sentence_len-th word."""
    out = []
    for i in range(1, n + 1):
        token = f"w{i}"
        if i % sentence_len == 0 or i == n:
            token += "."
        out.append(token)
    return " ".join(out)


def entry(text: str, input_tokens: int = 10, output_tokens: int = 20) -> dict:
    return {"text": text, "input_tokens": input_tokens, "output_tokens": output_tokens}


def happy_script(rid: str = "r1", comment: str | None = None) -> dict:
    """Full five-role script for one reflection, CONFIDENT on first pass."""
    comment = comment or words(60)
    return {
        f"Evaluator/{rid}": entry(evaluator_json()),
        f"EquityMonitor/{rid}": entry(equity_json()),
        f"Metacognitive/{rid}": entry(meta_json()),
        f"Aggregator/{rid}": entry(comment),
        f"Reflexion/{rid}": entry(reflexion_json()),
    }


def scripted(script: dict) -> ScriptedBackend:
    return ScriptedBackend(script)
