"""Assembles the full evaluation report from predictions and annotations.

The report joins model predictions with human annotations on reflection id,
builds the majority-vote reference, and computes every statistic the package
knows about. Statistics whose inputs are missing or degenerate (a single
class, a constant rater, an empty band) are reported as null rather than
failing the whole report; the error-level operations in `metrics` keep their
strict behavior.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import AnnotationRecord, Reflection, majority_vote
from .errors import DegenerateAgreementError, MetricsError
from .metrics import (
    BandPartition,
    PairedScores,
    QualityRatings,
    assign_bands,
    delta_mae,
    feedback_quality,
    mae,
    pooled_qwk_stats,
    qwk,
    quality_dimension_stats,
    icc_2_1,
)
from .rubric import DIMENSION_ORDER, DimensionId, ScoreVector

OVERALL = "overall"


@dataclass(frozen=True)
class MeanSd:
    mean: float
    sd: float | None

    def as_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd}


@dataclass(frozen=True)
class MetricsReport:
    """Every evaluation statistic, plus the join bookkeeping."""

    n_reflections: int
    n_scores: int
    mae_per_dimension: dict[str, float]
    mae_overall: float
    qwk_per_dimension: dict[str, float | None]
    qwk_overall: float | None
    qwk_per_class: dict[int, dict[str, float | None]]
    qwk_pooled_per_dimension: dict[str, MeanSd] | None
    qwk_pooled_mean: float | None
    qwk_pooled_std: float | None
    icc_human_human: dict[str, MeanSd] | None
    icc_human_ai: dict[str, MeanSd] | None
    band_threshold: float
    band_counts: dict[str, int] | None
    band_mae_low: dict[str, float] | None
    band_mae_high: dict[str, float] | None
    delta_mae_per_dimension: dict[str, float] | None
    delta_mae: float | None
    q_of_g: float | None
    quality_per_dimension: dict[str, MeanSd] | None

    def to_json_dict(self) -> dict:
        def unpack(stats):
            if stats is None:
                return None
            return {name: value.as_dict() for name, value in stats.items()}

        return {
            "n_reflections": self.n_reflections,
            "n_scores": self.n_scores,
            "mae_per_dimension": self.mae_per_dimension,
            "mae_overall": self.mae_overall,
            "qwk_per_dimension": self.qwk_per_dimension,
            "qwk_overall": self.qwk_overall,
            "qwk_per_class": {str(c): v for c, v in self.qwk_per_class.items()},
            "qwk_pooled_per_dimension": unpack(self.qwk_pooled_per_dimension),
            "qwk_pooled_mean": self.qwk_pooled_mean,
            "qwk_pooled_std": self.qwk_pooled_std,
            "icc_human_human": unpack(self.icc_human_human),
            "icc_human_ai": unpack(self.icc_human_ai),
            "band_threshold": self.band_threshold,
            "band_counts": self.band_counts,
            "band_mae_low": self.band_mae_low,
            "band_mae_high": self.band_mae_high,
            "delta_mae_per_dimension": self.delta_mae_per_dimension,
            "delta_mae": self.delta_mae,
            "q_of_g": self.q_of_g,
            "quality_per_dimension": unpack(self.quality_per_dimension),
        }

    def csv_rows(self) -> list[tuple[str, str, str, str]]:
        """Flatten to (class, dimension, metric, value) rows."""
        rows: list[tuple[str, str, str, str]] = []

        def put(cls, dim, metric, value):
            if value is None:
                return
            rows.append((str(cls), str(dim), metric, repr(float(value))))

        for dim, value in self.mae_per_dimension.items():
            put("all", dim, "mae", value)
        put("all", OVERALL, "mae", self.mae_overall)
        for dim, value in self.qwk_per_dimension.items():
            put("all", dim, "qwk", value)
        put("all", OVERALL, "qwk", self.qwk_overall)
        for class_index, values in sorted(self.qwk_per_class.items()):
            for dim, value in values.items():
                put(class_index, dim, "qwk", value)
        if self.qwk_pooled_per_dimension:
            for dim, stats in self.qwk_pooled_per_dimension.items():
                put("pooled", dim, "qwk_mean", stats.mean)
                put("pooled", dim, "qwk_sd", stats.sd)
        for name, stats in (("icc_human_human", self.icc_human_human),
                            ("icc_human_ai", self.icc_human_ai)):
            if stats:
                for dim, value in stats.items():
                    put("all", dim, f"{name}_mean", value.mean)
                    put("all", dim, f"{name}_sd", value.sd)
        if self.band_counts:
            for key, value in self.band_counts.items():
                put("all", OVERALL, key, value)
        if self.band_mae_low:
            for dim, value in self.band_mae_low.items():
                put("all", dim, "mae_low", value)
        if self.band_mae_high:
            for dim, value in self.band_mae_high.items():
                put("all", dim, "mae_high", value)
        if self.delta_mae_per_dimension:
            for dim, value in self.delta_mae_per_dimension.items():
                put("all", dim, "delta_mae", value)
        put("all", OVERALL, "delta_mae", self.delta_mae)
        put("all", OVERALL, "q_of_g", self.q_of_g)
        if self.quality_per_dimension:
            for dim, stats in self.quality_per_dimension.items():
                put("all", dim, "quality_mean", stats.mean)
                put("all", dim, "quality_sd", stats.sd)
        return rows


def write_report_json(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_json_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def write_report_csv(report: MetricsReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("class", "dimension", "metric", "value"))
        writer.writerows(report.csv_rows())


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


def _consensus_scores(
    annotations: Sequence[AnnotationRecord],
) -> dict[str, ScoreVector]:
    grouped: dict[str, list[ScoreVector]] = {}
    for record in annotations:
        if record.kind == "grading":
            grouped.setdefault(record.reflection_id, []).append(record.grading_scores)
    return {
        rid: (vectors[0] if len(vectors) == 1 else majority_vote(vectors))
        for rid, vectors in grouped.items()
    }


def _quality_ratings(
    annotations: Sequence[AnnotationRecord],
) -> QualityRatings | None:
    grouped: dict[str, list] = {}
    for record in annotations:
        if record.kind == "feedback_quality":
            grouped.setdefault(record.reflection_id, []).append(record.quality_ratings)
    if not grouped:
        return None
    return QualityRatings(
        by_comment={rid: tuple(vectors) for rid, vectors in grouped.items()}
    )


def _safe_qwk(human: list[int], model: list[int]) -> float | None:
    try:
        return qwk(human, model)
    except (DegenerateAgreementError, MetricsError):
        return None


def _qwk_block(pairs: PairedScores) -> dict[str, float | None]:
    """Per-dimension QWK plus the pooled-confusion overall value.

    The overall value concatenates all four dimensions' pairs into one
    confusion matrix rather than averaging the per-dimension statistics.
    """
    block: dict[str, float | None] = {}
    pooled_h: list[int] = []
    pooled_m: list[int] = []
    for dim in DIMENSION_ORDER:
        human, model = pairs.dimension_pairs(dim)
        block[dim.value] = _safe_qwk(human, model)
        pooled_h.extend(human)
        pooled_m.extend(model)
    block[OVERALL] = _safe_qwk(pooled_h, pooled_m)
    return block


def _grading_matrix(
    annotations: Sequence[AnnotationRecord],
    ids: Sequence[str],
    dim: DimensionId,
) -> np.ndarray | None:
    """Targets x raters matrix for one dimension; needs every rater on every target."""
    by_reflection: dict[str, dict[str, int]] = {}
    raters: set[str] = set()
    for record in annotations:
        if record.kind == "grading" and record.reflection_id in set(ids):
            by_reflection.setdefault(record.reflection_id, {})[
                record.annotator_id
            ] = record.grading_scores[dim]
            raters.add(record.annotator_id)
    if len(raters) < 2:
        return None
    rater_order = sorted(raters)
    rows = []
    for rid in ids:
        cells = by_reflection.get(rid, {})
        if all(r in cells for r in rater_order):
            rows.append([cells[r] for r in rater_order])
    if len(rows) < 2:
        return None
    return np.asarray(rows, dtype=float)


def _safe_icc(matrix: np.ndarray | None) -> float | None:
    if matrix is None:
        return None
    try:
        return icc_2_1(matrix)
    except (DegenerateAgreementError, MetricsError):
        return None


def _icc_summary(
    cells: dict[DimensionId, list[float]],
) -> dict[str, MeanSd] | None:
    """Mean and sample sd per dimension across class cells, plus overall."""
    if not any(cells.values()):
        return None
    out: dict[str, MeanSd] = {}
    all_values: list[float] = []
    for dim in DIMENSION_ORDER:
        values = cells[dim]
        if values:
            out[dim.value] = MeanSd(_mean(values), _sd_or_none(values))
            all_values.extend(values)
    if all_values:
        out[OVERALL] = MeanSd(_mean(all_values), _sd_or_none(all_values))
    return out or None


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _sd_or_none(values: Sequence[float]) -> float | None:
    if len(values) < 2:
        return None
    mu = _mean(values)
    return math.sqrt(math.fsum((v - mu) ** 2 for v in values) / (len(values) - 1))


def compute_report(
    annotations: Sequence[AnnotationRecord],
    predictions: Mapping[str, ScoreVector],
    reflections: Sequence[Reflection] | None = None,
    band_threshold: float = 1.5,
) -> MetricsReport:
    """Join everything and compute the full report.

    `reflections` is optional; without it the per-class and pooled sections
    are null (class structure is unknown) and annotation ids are taken at
    face value.
    """
    if reflections is not None:
        known = {r.id for r in reflections}
        for record in annotations:
            if record.reflection_id not in known:
                raise MetricsError(
                    f"dangling reflection_id {record.reflection_id!r} in annotations"
                )

    consensus = _consensus_scores(annotations)
    pairs = PairedScores.from_maps(consensus, predictions)
    if pairs.n == 0:
        raise MetricsError("no joined records between predictions and annotations")

    mae_result = mae(pairs)

    qwk_all = _qwk_block(pairs)

    class_of: dict[str, int] = (
        {r.id: r.class_index for r in reflections} if reflections else {}
    )
    qwk_per_class: dict[int, dict[str, float | None]] = {}
    class_ids: dict[int, list[str]] = {}
    for rid in pairs.reflection_ids:
        if rid in class_of:
            class_ids.setdefault(class_of[rid], []).append(rid)
    for class_index in sorted(class_ids):
        qwk_per_class[class_index] = _qwk_block(pairs.subset(class_ids[class_index]))

    qwk_pooled_per_dimension = None
    qwk_pooled_mean = None
    qwk_pooled_std = None
    complete_classes = {
        c: {k: v for k, v in block.items() if v is not None}
        for c, block in qwk_per_class.items()
    }
    if len(complete_classes) >= 2:
        try:
            pooled = pooled_qwk_stats(complete_classes)
        except MetricsError:
            pooled = {}
        if pooled:
            qwk_pooled_per_dimension = {
                name: MeanSd(mean=m, sd=s)
                for name, (m, s) in pooled.items()
                if name != OVERALL
            }
            if OVERALL in pooled:
                qwk_pooled_mean, qwk_pooled_std = pooled[OVERALL]

    # ICC: one cell per (class, dimension); with no class info, one pooled cell.
    icc_groups = class_ids or {0: list(pairs.reflection_ids)}
    hh_cells: dict[DimensionId, list[float]] = {d: [] for d in DIMENSION_ORDER}
    ha_cells: dict[DimensionId, list[float]] = {d: [] for d in DIMENSION_ORDER}
    for ids in icc_groups.values():
        subset = pairs.subset(ids)
        for dim in DIMENSION_ORDER:
            value = _safe_icc(_grading_matrix(annotations, ids, dim))
            if value is not None:
                hh_cells[dim].append(value)
            human, model = subset.dimension_pairs(dim)
            if len(human) >= 2:
                value = _safe_icc(np.column_stack([human, model]).astype(float))
                if value is not None:
                    ha_cells[dim].append(value)

    band_counts = None
    band_mae_low = None
    band_mae_high = None
    delta_per_dim = None
    delta_overall = None
    bands: BandPartition = assign_bands(
        {rid: consensus[rid] for rid in pairs.reflection_ids}, band_threshold
    )
    n_low = len(bands.low.member_reflection_ids)
    n_high = len(bands.high.member_reflection_ids)
    band_counts = {
        "low_reflections": n_low,
        "high_reflections": n_high,
        "low_scores": n_low * len(DIMENSION_ORDER),
        "high_scores": n_high * len(DIMENSION_ORDER),
    }
    if n_low and n_high:
        delta_result = delta_mae(pairs, bands)
        band_mae_low = {
            dim.value: delta_result.low.per_dimension[dim] for dim in DIMENSION_ORDER
        }
        band_mae_low[OVERALL] = delta_result.low.overall
        band_mae_high = {
            dim.value: delta_result.high.per_dimension[dim] for dim in DIMENSION_ORDER
        }
        band_mae_high[OVERALL] = delta_result.high.overall
        delta_per_dim = {
            dim.value: delta_result.gap_per_dimension[dim] for dim in DIMENSION_ORDER
        }
        delta_overall = delta_result.gap

    quality = _quality_ratings(annotations)
    q_of_g = None
    quality_per_dimension = None
    if quality is not None:
        q_of_g = feedback_quality(quality)
        quality_per_dimension = {
            dim.value: MeanSd(mean=m, sd=s)
            for dim, (m, s) in quality_dimension_stats(quality).items()
        }

    return MetricsReport(
        n_reflections=pairs.n,
        n_scores=pairs.n * len(DIMENSION_ORDER),
        mae_per_dimension={
            dim.value: mae_result.per_dimension[dim] for dim in DIMENSION_ORDER
        },
        mae_overall=mae_result.overall,
        qwk_per_dimension={k: v for k, v in qwk_all.items() if k != OVERALL},
        qwk_overall=qwk_all[OVERALL],
        qwk_per_class=qwk_per_class,
        qwk_pooled_per_dimension=qwk_pooled_per_dimension,
        qwk_pooled_mean=qwk_pooled_mean,
        qwk_pooled_std=qwk_pooled_std,
        icc_human_human=_icc_summary(hh_cells),
        icc_human_ai=_icc_summary(ha_cells),
        band_threshold=band_threshold,
        band_counts=band_counts,
        band_mae_low=band_mae_low,
        band_mae_high=band_mae_high,
        delta_mae_per_dimension=delta_per_dim,
        delta_mae=delta_overall,
        q_of_g=q_of_g,
        quality_per_dimension=quality_per_dimension,
    )
