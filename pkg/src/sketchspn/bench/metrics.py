from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

PERCENTILES = (50, 90, 95, 99, 100)


class MetricError(ValueError):
    pass


def q_error(estimate: float, truth: float) -> float:
    if estimate <= 0 or truth <= 0:
        raise MetricError("q-error needs positive estimate and truth")
    return max(estimate / truth, truth / estimate)


def nearest_rank(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: the smallest value with at least p% of the data at or below it."""
    if not len(values):
        raise MetricError("percentile of an empty sample")
    if not 0 < p <= 100:
        raise MetricError(f"percentile {p} outside (0, 100]")
    ordered = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(p / 100.0 * len(ordered)))
    return float(ordered[rank - 1])


def percentile_table(values: Sequence[float], ps=PERCENTILES) -> dict[str, float]:
    return {("max" if p == 100 else f"p{p}"): nearest_rank(values, p) for p in ps}


@dataclass
class MetricSummary:
    count: int
    clamped: int
    q_error: dict[str, float]
    mean_relative_error: float
    relative_errors: dict[str, float] = field(default_factory=dict)
    underestimation_rate: float = 0.0

    def to_dict(self) -> dict:
        return {"count": self.count, "clamped_zero_truths": self.clamped,
                "q_error": self.q_error, "mean_relative_error": self.mean_relative_error,
                "underestimation_rate": self.underestimation_rate}


def pair_up(estimates: Mapping[str, float], truths: Mapping[str, float | None]):
    """Matching (id, estimate, truth) triples; raises on ids present on one side only."""
    missing = sorted(set(estimates) ^ set(truths))
    if missing:
        raise MetricError(f"query ids do not match: {missing[:5]}")
    return [(q, float(estimates[q]), truths[q]) for q in estimates]


def summarize(estimates: Mapping[str, float], truths: Mapping[str, float | None]) -> MetricSummary:
    """Skipped truths (None) are dropped; zero truths are clamped to 1 and counted."""
    rows = [(q, e, t) for q, e, t in pair_up(estimates, truths) if t is not None]
    if not rows:
        raise MetricError("no query has a truth value")
    clamped = sum(1 for _, _, t in rows if t < 1)
    if clamped:
        log.info("clamped %d zero-truth queries to truth 1", clamped)
    est = np.maximum(np.array([e for _, e, _ in rows]), 1.0)
    tru = np.maximum(np.array([float(t) for _, _, t in rows]), 1.0)
    qerr = np.maximum(est / tru, tru / est)
    rel = (est - tru) / tru
    return MetricSummary(len(rows), clamped, percentile_table(qerr), float(rel.mean()),
                         {q: float(r) for (q, _, _), r in zip(rows, rel)},
                         float(np.mean(est < tru)))


def l1_distance(a, b) -> float:
    return float(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)).sum())


def format_table(rows: Mapping[str, Mapping[str, float]]) -> str:
    """Plain-text percentile table, one line per labelled summary."""
    if not rows:
        return ""
    cols = list(next(iter(rows.values())))
    width = max(len(k) for k in rows) + 2
    lines = ["".ljust(width) + "".join(c.rjust(12) for c in cols)]
    for label, vals in rows.items():
        lines.append(label.ljust(width) + "".join(f"{vals[c]:12.3f}" for c in cols))
    return "\n".join(lines)
