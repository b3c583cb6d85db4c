"""Token-price and latency accounting for graded corpora.

Money is handled in exact decimal arithmetic end to end; rounding happens
only in the display strings, never in stored values. Wall-clock projections
use the ideal time/threads model, which holds when calls are dominated by
network I/O rather than compute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Mapping, Sequence

from .backend import UsageRecord
from .errors import CostingError

TOKENS_PER_PRICE_UNIT = Decimal(1_000_000)
DEFAULT_THREAD_COUNTS = (1, 2, 4, 8)


@dataclass(frozen=True)
class PriceSheet:
    """Prices in dollars per million tokens."""

    input_price_per_million: Decimal
    output_price_per_million: Decimal

    def __post_init__(self):
        object.__setattr__(
            self, "input_price_per_million", Decimal(str(self.input_price_per_million))
        )
        object.__setattr__(
            self, "output_price_per_million", Decimal(str(self.output_price_per_million))
        )
        if self.input_price_per_million < 0 or self.output_price_per_million < 0:
            raise CostingError("prices must be non-negative")


# 2024-07-18 list prices for the small chat model tier.
PRICE_PRESETS: Mapping[str, PriceSheet] = {
    "gpt-4o-mini-2024-07-18": PriceSheet(Decimal("0.15"), Decimal("0.60")),
}


def cost_of(usage: UsageRecord, prices: PriceSheet) -> Decimal:
    """Exact dollar cost of one usage record.

    input_tokens * p_in / 1e6 + output_tokens * p_out / 1e6, computed in
    decimal arithmetic (division by a power of ten is exact).
    """
    return (
        Decimal(usage.input_tokens) * prices.input_price_per_million
        + Decimal(usage.output_tokens) * prices.output_price_per_million
    ) / TOKENS_PER_PRICE_UNIT


def latency_stats(latencies: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and sample standard deviation of per-item latencies."""
    if not latencies:
        raise CostingError("empty latency list")
    mean = math.fsum(latencies) / len(latencies)
    if len(latencies) < 2:
        return (mean, 0.0)
    variance = math.fsum((x - mean) ** 2 for x in latencies) / (len(latencies) - 1)
    return (mean, math.sqrt(variance))


def project_wall_clock(n_items: int, per_item: float, threads: int) -> float:
    """Ideal wall-clock seconds for n items at per-item seconds on T threads."""
    if threads < 1:
        raise CostingError("threads must be >= 1")
    return n_items * per_item / threads


def format_usd(amount: Decimal) -> str:
    """Two-decimal display string; the exact value stays untouched."""
    return f"${amount.quantize(Decimal('0.01')):f}"


def format_mean_sd(mean: float, sd: float, unit: str = "s") -> str:
    return f"{mean:.2f} ± {sd:.2f} {unit}"


@dataclass(frozen=True)
class CostReport:
    """Aggregate cost and latency statistics for a batch of usage records."""

    n_items: int
    per_reflection_cost: Decimal
    total_cost: Decimal
    mean_latency: float
    latency_sd: float
    projected_wall_clock: Mapping[int, float]

    def to_json_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "per_reflection_cost": str(self.per_reflection_cost),
            "per_reflection_cost_display": format_usd(self.per_reflection_cost),
            "total_cost": str(self.total_cost),
            "total_cost_display": format_usd(self.total_cost),
            "mean_latency_s": self.mean_latency,
            "latency_sd_s": self.latency_sd,
            "latency_display": format_mean_sd(self.mean_latency, self.latency_sd),
            "projected_wall_clock_s": {
                str(t): seconds for t, seconds in self.projected_wall_clock.items()
            },
        }


def build_cost_report(
    usages: Sequence[UsageRecord],
    prices: PriceSheet,
    thread_counts: Sequence[int] = DEFAULT_THREAD_COUNTS,
) -> CostReport:
    """Cost and latency report over per-reflection usage records."""
    if not usages:
        raise CostingError("no usage records")
    costs = [cost_of(u, prices) for u in usages]
    total = sum(costs, Decimal(0))
    mean_latency, latency_sd = latency_stats([u.latency for u in usages])
    projections = {
        t: project_wall_clock(len(usages), mean_latency, t) for t in thread_counts
    }
    return CostReport(
        n_items=len(usages),
        per_reflection_cost=total / len(usages),
        total_cost=total,
        mean_latency=mean_latency,
        latency_sd=latency_sd,
        projected_wall_clock=projections,
    )
