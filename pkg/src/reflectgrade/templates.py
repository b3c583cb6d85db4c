"""Editable prompt templates for the five agent roles.

Each role has one UTF-8 text file. Templates contain `{placeholder}` tokens
drawn from a fixed vocabulary; only known placeholders are substituted, so
literal braces (e.g. JSON examples inside a prompt) pass through untouched.
The packaged defaults can be overridden by pointing at a templates directory
containing files with the same names.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ReflectgradeError

ROLE_EVALUATOR = "Evaluator"
ROLE_EQUITY = "EquityMonitor"
ROLE_METACOGNITIVE = "Metacognitive"
ROLE_AGGREGATOR = "Aggregator"
ROLE_REFLEXION = "Reflexion"

TEMPLATE_FILES = {
    ROLE_EVALUATOR: "evaluator.txt",
    ROLE_EQUITY: "equity_monitor.txt",
    ROLE_METACOGNITIVE: "metacognitive.txt",
    ROLE_AGGREGATOR: "aggregator.txt",
    ROLE_REFLEXION: "reflexion.txt",
}

PLACEHOLDERS = (
    "reflection",
    "rubric",
    "narrative",
    "suggestions",
    "evaluation",
    "equity_review",
    "meta_prompts",
    "comment",
)

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")

SYSTEM_PROMPTS = {
    ROLE_EVALUATOR: "You are the Evaluator agent: you score one learner reflection against a fixed rubric.",
    ROLE_EQUITY: "You are the Equity Monitor agent: you audit narratives for biased or exclusionary phrasing.",
    ROLE_METACOGNITIVE: "You are the Metacognitive Coach agent: you prompt learners to examine their own thinking.",
    ROLE_AGGREGATOR: "You are the Aggregator agent: you compose one short, learner-facing feedback comment.",
    ROLE_REFLEXION: "You are the Reflexion Reviewer agent: you decide whether a feedback comment is ready for release.",
}


def render_template(template: str, values: dict[str, str]) -> str:
    """Substitute known placeholders; unknown braces are left as-is."""

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            raise ReflectgradeError(f"template placeholder {{{name}}} has no value")
        return values[name]

    return _PLACEHOLDER_RE.sub(_sub, template)


@dataclass(frozen=True)
class PromptTemplates:
    """The five role templates, loaded once and shared read-only."""

    by_role: dict[str, str]

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptTemplates":
        """Load templates from a directory, or the packaged defaults."""
        by_role: dict[str, str] = {}
        if directory is None:
            package_dir = resources.files(__package__) / "templates"
            for role, filename in TEMPLATE_FILES.items():
                by_role[role] = (package_dir / filename).read_text(encoding="utf-8")
        else:
            directory = Path(directory)
            if not directory.is_dir():
                raise ReflectgradeError(f"templates directory not found: {directory}")
            for role, filename in TEMPLATE_FILES.items():
                path = directory / filename
                if not path.exists():
                    raise ReflectgradeError(f"missing template file: {path}")
                by_role[role] = path.read_text(encoding="utf-8")
        return cls(by_role=dict(by_role))

    def render(self, role: str, **values: str) -> str:
        return render_template(self.by_role[role], values)


def write_default_templates(directory: str | Path) -> list[Path]:
    """Copy the packaged templates into a directory for local editing."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    defaults = PromptTemplates.load(None)
    written = []
    for role, filename in TEMPLATE_FILES.items():
        path = directory / filename
        path.write_text(defaults.by_role[role], encoding="utf-8")
        written.append(path)
    return written
