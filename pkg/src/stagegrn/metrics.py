"""Edge-recovery indexes for an estimated network against the truth."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import NOT_REGULATED_INDEX, RegulatoryModel

INDEXES = ("detection", "recall", "error", "precision", "f1")
UNDEFINED = math.nan  # ratios of a transition without true edges


@dataclass(frozen=True)
class EdgeCounts:
    true: int
    detected: int
    correct: int

    def __post_init__(self):
        if not 0 <= self.correct <= min(self.true, self.detected):
            raise ValueError(f"inconsistent counts {self}")

    def __add__(self, other: "EdgeCounts") -> "EdgeCounts":
        return EdgeCounts(self.true + other.true, self.detected + other.detected, self.correct + other.correct)

    def indexes(self) -> dict[str, float]:
        if self.true == 0:
            return {name: UNDEFINED for name in INDEXES}
        recall = self.correct / self.true
        precision = self.correct / self.detected if self.detected else 0.0
        return {
            "detection": self.detected / self.true,
            "recall": recall,
            "error": ((self.detected - self.correct) + (self.true - self.correct)) / self.true,
            "precision": precision,
            "f1": 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0,
        }


@dataclass(frozen=True)
class MetricsReport:
    """Indexes per transition (keyed by destination stage) and pooled over transitions.

    Transitions with no true edges report NaN and are left out of the pooled
    counts.
    """

    counts: dict[int, EdgeCounts]
    rows: dict[int, dict[str, float]] = field(init=False)
    total_counts: EdgeCounts = field(init=False)
    total: dict[str, float] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "rows", {t: c.indexes() for t, c in self.counts.items()})
        pooled = EdgeCounts(0, 0, 0)
        for c in self.counts.values():
            if c.true > 0:
                pooled = pooled + c
        object.__setattr__(self, "total_counts", pooled)
        object.__setattr__(self, "total", pooled.indexes())

    def index(self, name: str, transition: int | str = "total") -> float:
        return self.total[name] if transition == "total" else self.rows[int(transition)][name]


def compute_metrics(true_model: RegulatoryModel, estimated_model: RegulatoryModel) -> MetricsReport:
    """Count true, detected and exactly matching (target, source) edges per transition."""
    if true_model.dims.T != estimated_model.dims.T or true_model.dims.K != estimated_model.dims.K:
        raise ValueError("true and estimated models must have the same dimensions")
    counts = {}
    for row, t in enumerate(true_model.dims.transitions):
        tru, est = true_model.parents[row], estimated_model.parents[row]
        has_t, has_e = tru != NOT_REGULATED_INDEX, est != NOT_REGULATED_INDEX
        counts[t] = EdgeCounts(int(has_t.sum()), int(has_e.sum()), int(np.sum(has_t & (tru == est))))
    return MetricsReport(counts)


@dataclass(frozen=True)
class AggregateMetrics:
    """Mean and sample variance of each index over replicates, ignoring undefined values."""

    transitions: tuple[int, ...]
    mean: dict[str, dict[str, float]]  # row label ("2", "3", ..., "total") -> index -> value
    variance: dict[str, dict[str, float]]
    replicates: int

    @classmethod
    def from_reports(cls, reports: list[MetricsReport]) -> "AggregateMetrics":
        if not reports:
            raise ValueError("no reports to aggregate")
        transitions = tuple(sorted(reports[0].counts))
        labels = [str(t) for t in transitions] + ["total"]
        mean: dict[str, dict[str, float]] = {}
        var: dict[str, dict[str, float]] = {}
        for label in labels:
            mean[label], var[label] = {}, {}
            for name in INDEXES:
                vals = np.array([r.index(name, label) for r in reports], dtype=float)
                vals = vals[~np.isnan(vals)]
                mean[label][name] = float(vals.mean()) if vals.size else UNDEFINED
                var[label][name] = float(vals.var(ddof=1)) if vals.size > 1 else (0.0 if vals.size else UNDEFINED)
        return cls(transitions, mean, var, len(reports))
