"""Exploratory statistics over raw events and interaction records.

Produces the numbers an analyst would read off summary tables and plots:
per-column uniqueness and mode, pairwise Pearson correlations, price
quartiles grouped by transaction status or token, and a time-bucketed
market trend. Everything lands in one deterministic JSON report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Optional, Sequence

from .ingest import CANONICAL_FIELDS, InteractionRecord, RawEvent, _is_empty

HIGH_CORRELATION_THRESHOLD = 0.9


@dataclass(frozen=True)
class FeatureSummary:
    column: str
    n_unique: int
    most_frequent: Optional[tuple[str, int]]
    empty_rate: float


@dataclass(frozen=True)
class CorrelationMatrix:
    columns: tuple[str, ...]
    values: tuple[tuple[Optional[float], ...], ...]


@dataclass(frozen=True)
class TrendSeries:
    bucket_width: timedelta
    points: tuple[tuple[datetime, int, float], ...]


def _as_text(value) -> str:
    return value.isoformat() if isinstance(value, datetime) else str(value)


def summarize_features(events: Sequence[RawEvent]) -> list[FeatureSummary]:
    """One summary per canonical column, then per observed extra column.

    Empty entries are excluded from uniqueness and mode counting; mode
    ties break to the lexicographically smallest value.
    """
    if not events:
        raise ValueError("summarize_features requires at least one event")
    extra_cols: dict[str, None] = {}
    for ev in events:
        for key in ev.extra:
            extra_cols.setdefault(key)

    out = []
    for col in CANONICAL_FIELDS + tuple(extra_cols):
        counts: dict[str, int] = {}
        n_empty = 0
        for ev in events:
            v = ev.column(col)
            if _is_empty(v):
                n_empty += 1
            else:
                key = _as_text(v)
                counts[key] = counts.get(key, 0) + 1
        if counts:
            top = max(counts.values())
            mode = (min(v for v, c in counts.items() if c == top), top)
        else:
            mode = None
        out.append(
            FeatureSummary(
                column=col,
                n_unique=len(counts),
                most_frequent=mode,
                empty_rate=n_empty / len(events),
            )
        )
    return out


def _pearson(xs: list[float], ys: list[float]) -> Optional[float]:
    n = len(xs)
    if n < 2:
        return None
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        return None
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    return sxy / math.sqrt(sxx * syy)


def correlation_matrix(
    records: Sequence[InteractionRecord], columns: Sequence[str]
) -> CorrelationMatrix:
    """Pairwise Pearson r over rows where both columns are present.

    Pairs with fewer than 2 overlapping rows or zero variance get None.
    """
    if len(records) < 2:
        raise ValueError("correlation_matrix requires at least 2 records")
    known = set()
    for rec in records:
        known.update(rec.numeric_features)
    for col in columns:
        if col not in known:
            raise ValueError(f"unknown numeric column: {col!r}")

    k = len(columns)
    values: list[list[Optional[float]]] = [[None] * k for _ in range(k)]
    for i, ci in enumerate(columns):
        for j in range(i, k):
            cj = columns[j]
            xs, ys = [], []
            for rec in records:
                nf = rec.numeric_features
                if ci in nf and cj in nf:
                    xs.append(nf[ci])
                    ys.append(nf[cj])
            r = _pearson(xs, ys)
            values[i][j] = r
            values[j][i] = r
    return CorrelationMatrix(
        columns=tuple(columns), values=tuple(tuple(row) for row in values)
    )


def high_correlation_pairs(matrix: CorrelationMatrix) -> list[tuple[str, str, float]]:
    """Off-diagonal pairs with |r| above the redundancy threshold."""
    pairs = []
    for i, ci in enumerate(matrix.columns):
        for j in range(i + 1, len(matrix.columns)):
            r = matrix.values[i][j]
            if r is not None and abs(r) > HIGH_CORRELATION_THRESHOLD:
                pairs.append((ci, matrix.columns[j], r))
    return pairs


def market_trend(events: Sequence[RawEvent], bucket_width: timedelta) -> TrendSeries:
    """Count and USD volume per epoch-aligned time bucket.

    Buckets are contiguous from the first to the last dated event; empty
    prices still count a transaction but add nothing to volume.
    """
    if bucket_width <= timedelta(0):
        raise ValueError("bucket_width must be positive")
    width = bucket_width.total_seconds()
    dated = [ev for ev in events if ev.created_date is not None]
    if not dated:
        return TrendSeries(bucket_width=bucket_width, points=())

    def bucket_of(ev: RawEvent) -> int:
        return int(math.floor(ev.created_date.timestamp() / width))

    counts: dict[int, int] = {}
    volumes: dict[int, float] = {}
    for ev in dated:
        b = bucket_of(ev)
        counts[b] = counts.get(b, 0) + 1
        volumes[b] = volumes.get(b, 0.0) + (ev.absolute_price_usd or 0.0)

    points = []
    for b in range(min(counts), max(counts) + 1):
        start = datetime.fromtimestamp(b * width, tz=timezone.utc)
        points.append((start, counts.get(b, 0), volumes.get(b, 0.0)))
    return TrendSeries(bucket_width=bucket_width, points=tuple(points))


def _quantile(sorted_vals: list[float], p: float) -> float:
    """Linear interpolation at position n*p + 0.5 (1-based, clamped)."""
    n = len(sorted_vals)
    h = min(max(n * p + 0.5, 1.0), float(n))
    lo = int(math.floor(h))
    frac = h - lo
    if lo >= n:
        return sorted_vals[-1]
    return sorted_vals[lo - 1] + frac * (sorted_vals[lo] - sorted_vals[lo - 1])


def price_stats(values: Sequence[float]) -> dict:
    vals = sorted(values)
    return {
        "count": len(vals),
        "mean": sum(vals) / len(vals),
        "min": vals[0],
        "q1": _quantile(vals, 0.25),
        "median": _quantile(vals, 0.50),
        "q3": _quantile(vals, 0.75),
        "max": vals[-1],
    }


def grouped_price_stats(events: Sequence[RawEvent], group_col: str) -> dict:
    """Quartiles and mean of USD price per value of a grouping column."""
    groups: dict[str, list[float]] = {}
    for ev in events:
        g = ev.column(group_col)
        if _is_empty(g) or ev.absolute_price_usd is None:
            continue
        groups.setdefault(str(g), []).append(ev.absolute_price_usd)
    return {g: price_stats(vals) for g, vals in sorted(groups.items())}


def emit_report(
    summaries: Sequence[FeatureSummary],
    matrix: CorrelationMatrix,
    trend: TrendSeries,
    grouped: dict[str, dict],
) -> str:
    """Assemble the JSON report; identical inputs yield identical bytes."""
    doc = {
        "univariate": [
            {
                "column": s.column,
                "n_unique": s.n_unique,
                "most_frequent": (
                    {"value": s.most_frequent[0], "count": s.most_frequent[1]}
                    if s.most_frequent
                    else None
                ),
                "empty_rate": s.empty_rate,
            }
            for s in summaries
        ],
        "correlation": {
            "columns": list(matrix.columns),
            "values": [list(row) for row in matrix.values],
            "high_correlation_pairs": [
                {"a": a, "b": b, "r": r} for a, b, r in high_correlation_pairs(matrix)
            ],
        },
        "bivariate": grouped,
        "trend": {
            "bucket_width_seconds": trend.bucket_width.total_seconds(),
            "points": [
                {"bucket_start": ts.isoformat(), "tx_count": n, "usd_volume": vol}
                for ts, n, vol in trend.points
            ],
        },
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def build_report(
    events: Sequence[RawEvent],
    records: Sequence[InteractionRecord],
    numeric_columns: Sequence[str],
    bucket_width: timedelta,
) -> str:
    """Convenience wrapper running the full analysis in one call."""
    return emit_report(
        summarize_features(events),
        correlation_matrix(records, numeric_columns),
        market_trend(events, bucket_width),
        {
            "event_type": grouped_price_stats(events, "event_type"),
            "payment_token": grouped_price_stats(events, "payment_token"),
        },
    )
