"""Batch reflection grading with role-based chat agents, plus evaluation.

Two halves:

* grading: `run_pipeline` / `grade_corpus` orchestrate five role-based chat
  agents (Evaluator, Equity Monitor, Metacognitive Coach, Aggregator,
  Reflexion Reviewer) to score a learner reflection on a four-dimension
  rubric and compose a feedback comment of at most 120 words;
* evaluation: `compute_report` and the functions in `metrics` compare
  predictions against human annotations with MAE, quadratic weighted kappa,
  ICC(2,1), the proficiency-band error gap, and the aggregate
  feedback-usefulness score; `costing` reproduces token-cost and throughput
  arithmetic.

The `reflectgrade` CLI ties both halves into reproducible batch runs.
"""

from .backend import (
    BackendConfig,
    ChatBackend,
    ChatRequest,
    ChatResponse,
    HttpBackend,
    ScriptedBackend,
    UsageRecord,
    accumulate_usage,
    make_backend,
)
from .corpus import (
    AnnotationRecord,
    EvaluationSet,
    Reflection,
    load_annotations,
    load_reflections,
    majority_vote,
    sample_classes,
    save_annotations,
    save_reflections,
)
from .costing import (
    CostReport,
    PriceSheet,
    build_cost_report,
    cost_of,
    latency_stats,
    project_wall_clock,
)
from .errors import ReflectgradeError
from .metrics import (
    Band,
    BandPartition,
    PairedScores,
    QualityRatings,
    assign_bands,
    delta_mae,
    feedback_quality,
    icc_2_1,
    mae,
    pooled_qwk_stats,
    qwk,
)
from .pipeline import (
    EvaluatorOutput,
    EquityReview,
    FeedbackComment,
    GradeFailure,
    MetaPrompts,
    PipelineResult,
    ReflexionVerdict,
    count_words,
    grade_corpus,
    run_pipeline,
)
from .report import MetricsReport, compute_report
from .rubric import (
    DEFAULT_FEEDBACK_RUBRIC,
    DEFAULT_GRADING_RUBRIC,
    DimensionId,
    FeedbackDimensionId,
    GradingRubric,
    ScoreVector,
    load_rubric,
    render_rubric_prompt,
    validate_scores,
)
from .templates import PromptTemplates

__version__ = "0.1.0"

__all__ = [
    "AnnotationRecord",
    "BackendConfig",
    "Band",
    "BandPartition",
    "ChatBackend",
    "ChatRequest",
    "ChatResponse",
    "CostReport",
    "DEFAULT_FEEDBACK_RUBRIC",
    "DEFAULT_GRADING_RUBRIC",
    "DimensionId",
    "EvaluationSet",
    "EvaluatorOutput",
    "EquityReview",
    "FeedbackComment",
    "FeedbackDimensionId",
    "GradeFailure",
    "GradingRubric",
    "HttpBackend",
    "MetaPrompts",
    "MetricsReport",
    "PairedScores",
    "PipelineResult",
    "PriceSheet",
    "PromptTemplates",
    "QualityRatings",
    "Reflection",
    "ReflectgradeError",
    "ReflexionVerdict",
    "ScoreVector",
    "ScriptedBackend",
    "UsageRecord",
    "accumulate_usage",
    "assign_bands",
    "build_cost_report",
    "compute_report",
    "cost_of",
    "count_words",
    "delta_mae",
    "feedback_quality",
    "grade_corpus",
    "icc_2_1",
    "latency_stats",
    "load_annotations",
    "load_reflections",
    "load_rubric",
    "mae",
    "majority_vote",
    "make_backend",
    "pooled_qwk_stats",
    "project_wall_clock",
    "qwk",
    "render_rubric_prompt",
    "run_pipeline",
    "sample_classes",
    "save_annotations",
    "save_reflections",
    "validate_scores",
]
