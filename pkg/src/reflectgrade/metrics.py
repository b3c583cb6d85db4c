"""Agreement, accuracy, fairness, and feedback-quality statistics.

Implements the full evaluation battery for model-vs-human rubric scores:
per-dimension and overall mean absolute error, quadratic weighted kappa,
two-way random-effects single-rater intraclass correlation, the
proficiency-band error gap, and the aggregate feedback-usefulness score.
All functions are pure and operate on immutable inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateAgreementError, MetricsError
from .rubric import (
    DIMENSION_ORDER,
    FEEDBACK_DIMENSION_ORDER,
    DimensionId,
    FeedbackDimensionId,
    ScoreVector,
)

SCORE_CATEGORIES = range(4)
DEFAULT_BAND_THRESHOLD = 1.5


# ---------------------------------------------------------------------------
# Paired scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairedScores:
    """Aligned (human, model) score vectors for a set of reflections."""

    reflection_ids: tuple[str, ...]
    human: tuple[ScoreVector, ...]
    model: tuple[ScoreVector, ...]

    def __post_init__(self):
        if not (len(self.reflection_ids) == len(self.human) == len(self.model)):
            raise MetricsError("reflection_ids, human, and model must align")

    @property
    def n(self) -> int:
        return len(self.reflection_ids)

    def dimension_pairs(self, dim: DimensionId) -> tuple[list[int], list[int]]:
        """Aligned (human, model) score lists for one dimension."""
        return ([v[dim] for v in self.human], [v[dim] for v in self.model])

    def subset(self, ids: Iterable[str]) -> "PairedScores":
        wanted = set(ids)
        keep = [i for i, rid in enumerate(self.reflection_ids) if rid in wanted]
        return PairedScores(
            reflection_ids=tuple(self.reflection_ids[i] for i in keep),
            human=tuple(self.human[i] for i in keep),
            model=tuple(self.model[i] for i in keep),
        )

    @classmethod
    def from_maps(
        cls,
        human: Mapping[str, ScoreVector],
        model: Mapping[str, ScoreVector],
    ) -> "PairedScores":
        """Join two id -> ScoreVector maps on their shared reflection ids."""
        shared = [rid for rid in human if rid in model]
        return cls(
            reflection_ids=tuple(shared),
            human=tuple(human[rid] for rid in shared),
            model=tuple(model[rid] for rid in shared),
        )


@dataclass(frozen=True)
class MaeResult:
    per_dimension: Mapping[DimensionId, float]
    overall: float


def mae(pairs: PairedScores) -> MaeResult:
    """Mean absolute error per dimension, and their unweighted mean.

    Per dimension, the average of |model - human| over all paired
    reflections; the overall value is the arithmetic mean of the four
    per-dimension errors. Sums use compensated summation.
    """
    if pairs.n == 0:
        raise MetricsError("empty dimension: no paired scores")
    per_dimension: dict[DimensionId, float] = {}
    for dim in DIMENSION_ORDER:
        human, model = pairs.dimension_pairs(dim)
        per_dimension[dim] = math.fsum(
            abs(m - h) for h, m in zip(human, model)
        ) / len(human)
    overall = math.fsum(per_dimension.values()) / len(per_dimension)
    return MaeResult(per_dimension=per_dimension, overall=overall)


# ---------------------------------------------------------------------------
# Quadratic weighted kappa
# ---------------------------------------------------------------------------


def qwk(
    human: Sequence[int],
    model: Sequence[int],
    categories: Sequence[int] = SCORE_CATEGORIES,
) -> float:
    """Quadratic weighted kappa between two ordinal raters.

    Builds the observed co-occurrence matrix O over the category grid, the
    chance-expected matrix E as the outer product of the two marginal count
    vectors divided by N (so that O and E have equal totals), and quadratic
    weights w_ij = (i - j)^2 / span^2 where span is the distance between the
    extreme categories. Returns 1 - sum(w*O) / sum(w*E).

    The normalizer on w cancels between numerator and denominator, so any
    positive rescaling of the weights leaves the statistic unchanged; span^2
    is used so individual weights lie in [0, 1].

    Raises DegenerateAgreementError when sum(w*E) == 0, i.e. both raters are
    constant and identical, which leaves no chance disagreement to correct
    for.
    """
    if len(human) != len(model):
        raise MetricsError("rater vectors must have equal length")
    if len(human) < 2:
        raise MetricsError("need at least 2 paired ratings")
    cats = list(categories)
    index = {c: i for i, c in enumerate(cats)}
    for value in list(human) + list(model):
        if value not in index:
            raise MetricsError(f"rating {value} outside categories {cats}")
    k = len(cats)
    span = max(cats) - min(cats)
    if span == 0:
        raise DegenerateAgreementError("single-category scale")

    observed = np.zeros((k, k))
    for h, m in zip(human, model):
        observed[index[h], index[m]] += 1.0
    row = observed.sum(axis=1)
    col = observed.sum(axis=0)
    expected = np.outer(row, col) / len(human)

    values = np.asarray(cats, dtype=float)
    weights = (values[:, None] - values[None, :]) ** 2 / span**2

    denominator = float(np.sum(weights * expected))
    if denominator == 0.0:
        raise DegenerateAgreementError(
            "undefined agreement: both raters are constant and identical"
        )
    return 1.0 - float(np.sum(weights * observed)) / denominator


# ---------------------------------------------------------------------------
# Intraclass correlation
# ---------------------------------------------------------------------------


def icc_2_1(ratings) -> float:
    """Single-rater, absolute-agreement ICC from a two-way random-effects ANOVA.

    Parameters
    ----------
    ratings : array-like, shape (n_targets, k_raters)
        Complete matrix of scores; n_targets >= 2, k_raters >= 2, no missing
        cells.

    Returns
    -------
    float
        (MSR - MSE) / (MSR + (k-1)*MSE + k*(MSC - MSE)/n), where MSR, MSC,
        and MSE are the row (target), column (rater), and residual mean
        squares of the two-way decomposition.

    Raises
    ------
    DegenerateAgreementError
        If the matrix has no variance at all, or the denominator vanishes
        (no target variance and no rater variance to attribute).
    """
    matrix = np.asarray(ratings, dtype=float)
    if matrix.ndim != 2:
        raise MetricsError("ratings must be a 2-D matrix")
    n, k = matrix.shape
    if n < 2 or k < 2:
        raise MetricsError(f"need at least 2 targets and 2 raters, got {n}x{k}")
    if not np.all(np.isfinite(matrix)):
        raise MetricsError("ratings matrix must be complete and finite")

    grand = matrix.mean()
    if np.allclose(matrix, grand):
        raise DegenerateAgreementError("constant ratings matrix: ICC undefined")

    row_means = matrix.mean(axis=1)
    col_means = matrix.mean(axis=0)
    ss_total = float(((matrix - grand) ** 2).sum())
    ss_rows = float(k * ((row_means - grand) ** 2).sum())
    ss_cols = float(n * ((col_means - grand) ** 2).sum())
    ss_error = ss_total - ss_rows - ss_cols

    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_error = ss_error / ((n - 1) * (k - 1))

    denominator = ms_rows + (k - 1) * ms_error + k * (ms_cols - ms_error) / n
    if abs(denominator) < 1e-12 * max(1.0, ss_total):
        raise DegenerateAgreementError("ICC denominator vanishes")
    return (ms_rows - ms_error) / denominator


# ---------------------------------------------------------------------------
# Proficiency bands and the error gap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Band:
    label: str  # "low" | "high"
    member_reflection_ids: frozenset[str]


@dataclass(frozen=True)
class BandPartition:
    low: Band
    high: Band

    def __post_init__(self):
        overlap = self.low.member_reflection_ids & self.high.member_reflection_ids
        if overlap:
            raise MetricsError(f"bands overlap on {sorted(overlap)[:3]}")


def assign_bands(
    reference_scores: Mapping[str, ScoreVector],
    threshold: float = DEFAULT_BAND_THRESHOLD,
) -> BandPartition:
    """Split reflections into low/high bands by mean human rubric score.

    A reflection is low-band when the mean of its four reference scores is
    strictly below the threshold (default 1.5, the midpoint between the
    {0,1} and {2,3} score groups), high-band otherwise. The two bands
    partition the input.
    """
    if not reference_scores:
        raise MetricsError("no reference scores to band")
    low, high = set(), set()
    for rid, vector in reference_scores.items():
        (low if vector.mean() < threshold else high).add(rid)
    return BandPartition(
        low=Band(label="low", member_reflection_ids=frozenset(low)),
        high=Band(label="high", member_reflection_ids=frozenset(high)),
    )


@dataclass(frozen=True)
class DeltaMaeResult:
    low: MaeResult
    high: MaeResult
    gap_per_dimension: Mapping[DimensionId, float]
    gap: float


def delta_mae(pairs: PairedScores, bands: BandPartition) -> DeltaMaeResult:
    """MAE within each proficiency band and the absolute gap between them.

    With two bands, the worst-band error gap reduces to
    |MAE_low - MAE_high|, computed per dimension and on the overall values.
    Raises MetricsError when either band contributes no paired scores.
    """
    low_pairs = pairs.subset(bands.low.member_reflection_ids)
    high_pairs = pairs.subset(bands.high.member_reflection_ids)
    if low_pairs.n == 0 or high_pairs.n == 0:
        empty = "low" if low_pairs.n == 0 else "high"
        raise MetricsError(f"empty band: {empty}")
    low = mae(low_pairs)
    high = mae(high_pairs)
    gap_per_dimension = {
        dim: abs(low.per_dimension[dim] - high.per_dimension[dim])
        for dim in DIMENSION_ORDER
    }
    return DeltaMaeResult(
        low=low,
        high=high,
        gap_per_dimension=gap_per_dimension,
        gap=abs(low.overall - high.overall),
    )


# ---------------------------------------------------------------------------
# Feedback quality
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QualityRatings:
    """Per comment, the rating vectors assigned by each grader."""

    by_comment: Mapping[str, tuple[Mapping[FeedbackDimensionId, int], ...]]

    def __post_init__(self):
        for comment_id, vectors in self.by_comment.items():
            if not vectors:
                raise MetricsError(f"comment {comment_id}: no grader ratings")
            for vector in vectors:
                for dim in FEEDBACK_DIMENSION_ORDER:
                    value = vector.get(dim)
                    if value is None or not 1 <= value <= 5:
                        raise MetricsError(
                            f"comment {comment_id}: rating for {dim.value} "
                            f"must be in 1..5, got {value!r}"
                        )

    def grader_means(self) -> dict[str, dict[FeedbackDimensionId, float]]:
        """Per comment, the across-grader mean rating for each dimension."""
        out: dict[str, dict[FeedbackDimensionId, float]] = {}
        for comment_id, vectors in self.by_comment.items():
            out[comment_id] = {
                dim: math.fsum(v[dim] for v in vectors) / len(vectors)
                for dim in FEEDBACK_DIMENSION_ORDER
            }
        return out


def feedback_quality(ratings: QualityRatings) -> float:
    """Aggregate usefulness: mean over comments of the mean grader rating.

    For each comment the grader ratings are averaged per dimension, those
    five dimension means are averaged, and the per-comment values are
    averaged over all comments.
    """
    means = ratings.grader_means()
    if not means:
        raise MetricsError("no quality ratings")
    per_comment = [
        math.fsum(vector.values()) / len(FEEDBACK_DIMENSION_ORDER)
        for vector in means.values()
    ]
    return math.fsum(per_comment) / len(per_comment)


def quality_dimension_stats(
    ratings: QualityRatings,
) -> dict[FeedbackDimensionId, tuple[float, float]]:
    """Per dimension, the (mean, sample sd) of the per-comment grader means."""
    means = ratings.grader_means()
    if not means:
        raise MetricsError("no quality ratings")
    out: dict[FeedbackDimensionId, tuple[float, float]] = {}
    for dim in FEEDBACK_DIMENSION_ORDER:
        values = [vector[dim] for vector in means.values()]
        out[dim] = (_mean(values), _sample_sd(values))
    return out


# ---------------------------------------------------------------------------
# Pooled QWK statistics across classes
# ---------------------------------------------------------------------------


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def _sample_sd(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    mu = _mean(values)
    return math.sqrt(math.fsum((v - mu) ** 2 for v in values) / (len(values) - 1))


def pooled_qwk_stats(
    per_class_qwk: Mapping[int, Mapping[str, float]],
) -> dict[str, tuple[float, float]]:
    """Mean and sample standard deviation of per-class QWK values.

    `per_class_qwk` maps class index to a map of series name ("cu", ...,
    "overall") to that class's QWK. Returns, per series, (mean, sd) across
    classes. The sample convention (n-1 denominator) is used; it is the one
    consistent with the package's published reference statistics. Requires
    at least two classes.
    """
    if len(per_class_qwk) < 2:
        raise MetricsError("pooled QWK stats need at least 2 classes")
    series: dict[str, list[float]] = {}
    for class_values in per_class_qwk.values():
        for name, value in class_values.items():
            series.setdefault(name, []).append(value)
    return {
        name: (_mean(values), _sample_sd(values)) for name, values in series.items()
    }
