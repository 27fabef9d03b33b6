"""Marketplace event ingestion: parsing, cleaning, labeling, and splitting.

Raw transaction events arrive as JSON (one object per line, or a single
array). Cleaning keeps events inside a configured time window, drops
feature columns whose empty rate exceeds a threshold, and turns the two
interest-signaling event types into label-1 interaction records. Label-0
records are sampled from the unobserved part of the user x asset grid.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

log = logging.getLogger(__name__)

# Event types that signal buyer interest; everything else is discarded.
POSITIVE_EVENT_TYPES = frozenset({"successful", "bid_withdrawn"})

# Canonical event columns. Anything else in the input rides along in `extra`.
STRING_FIELDS = (
    "event_id",
    "event_type",
    "asset_id",
    "asset_name",
    "asset_address",
    "collection_slug",
    "buyer_address",
    "seller_address",
    "payment_token",
)
NUMERIC_FIELDS = (
    "num_sales",
    "total_price",
    "absolute_price_usd",
    "user_loyalty",
    "asset_loyalty",
    "collection_loyalty",
)
CANONICAL_FIELDS = STRING_FIELDS + ("created_date",) + NUMERIC_FIELDS

# Columns that identify the interaction or define the label; they are keys,
# not features, and never enter the per-record feature maps.
KEY_COLUMNS = (
    "event_id",
    "event_type",
    "created_date",
    "buyer_address",
    "asset_id",
    "asset_name",
    "asset_address",
    "collection_slug",
)
FEATURE_CANDIDATES = tuple(c for c in CANONICAL_FIELDS if c not in KEY_COLUMNS)

DEFAULT_WINDOW_START = datetime(2022, 4, 12, 15, 0, tzinfo=timezone.utc)
DEFAULT_WINDOW_END = datetime(2022, 4, 17, 21, 0, tzinfo=timezone.utc)


class ParseError(ValueError):
    """Malformed input document; message carries the offending line number."""


class ConfigurationError(ValueError):
    """Cleaning configuration is unusable for the given data."""


@dataclass
class RawEvent:
    """One marketplace transaction event. None means the field was empty."""

    event_id: Optional[str] = None
    event_type: Optional[str] = None
    created_date: Optional[datetime] = None
    asset_id: Optional[str] = None
    asset_name: Optional[str] = None
    asset_address: Optional[str] = None
    collection_slug: Optional[str] = None
    num_sales: Optional[int] = None
    buyer_address: Optional[str] = None
    seller_address: Optional[str] = None
    payment_token: Optional[str] = None
    total_price: Optional[float] = None
    absolute_price_usd: Optional[float] = None
    user_loyalty: Optional[float] = None
    asset_loyalty: Optional[float] = None
    collection_loyalty: Optional[float] = None
    extra: dict[str, Optional[str]] = field(default_factory=dict)

    def column(self, name: str):
        """Value of a canonical column or an extra column (None if empty)."""
        if name in CANONICAL_FIELDS:
            return getattr(self, name)
        return self.extra.get(name)


@dataclass(frozen=True)
class CleaningConfig:
    window_start: datetime = DEFAULT_WINDOW_START
    window_end: datetime = DEFAULT_WINDOW_END
    empty_rate_threshold: float = 0.25
    negative_ratio: float = 1.0
    rng_seed: int = 0

    def validate(self) -> None:
        if self.window_start >= self.window_end:
            raise ConfigurationError("window_start must precede window_end")
        if not 0.0 <= self.empty_rate_threshold <= 1.0:
            raise ConfigurationError("empty_rate_threshold must be in [0, 1]")
        if self.negative_ratio <= 0.0:
            raise ConfigurationError("negative_ratio must be positive")


@dataclass
class InteractionRecord:
    """One labeled (user, asset) row; the unit of training data."""

    label: int
    user: str
    asset_key: str
    collection_slug: str
    categorical_features: dict[str, str] = field(default_factory=dict)
    numeric_features: dict[str, float] = field(default_factory=dict)


@dataclass
class DatasetBundle:
    train: list[InteractionRecord]
    validation: list[InteractionRecord]
    test: list[InteractionRecord]
    grouping: str = "asset_based"


def _is_empty(value) -> bool:
    return value is None or value == ""


def _parse_timestamp(value: str) -> datetime:
    """ISO-8601 timestamp; naive values are interpreted as UTC."""
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


def _event_from_obj(obj: dict) -> RawEvent:
    if not isinstance(obj, dict):
        raise ValueError("record is not a JSON object")
    if _is_empty(obj.get("event_type")):
        raise ValueError("missing event_type")
    ev = RawEvent()
    for name in STRING_FIELDS:
        v = obj.get(name)
        setattr(ev, name, None if _is_empty(v) else str(v))
    v = obj.get("created_date")
    ev.created_date = None if _is_empty(v) else _parse_timestamp(str(v))
    v = obj.get("num_sales")
    if not _is_empty(v):
        ev.num_sales = int(v)
        if ev.num_sales < 0:
            raise ValueError("num_sales must be >= 0")
    for name in NUMERIC_FIELDS[1:]:
        v = obj.get(name)
        setattr(ev, name, None if _is_empty(v) else float(v))
    for key, v in obj.items():
        if key not in CANONICAL_FIELDS:
            ev.extra[key] = None if v is None else str(v)
    return ev


def parse_events(text: str) -> list[RawEvent]:
    """Parse a line-delimited or array-style JSON document into events.

    Records missing event_type (or otherwise uninterpretable) are skipped
    and counted; malformed JSON raises ParseError with the line number.
    """
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            objs = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {exc.lineno}: {exc.msg}") from exc
        numbered = list(enumerate(objs, start=1))
    else:
        numbered = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                numbered.append((lineno, json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc.msg}") from exc

    events: list[RawEvent] = []
    skipped = 0
    for lineno, obj in numbered:
        try:
            events.append(_event_from_obj(obj))
        except (ValueError, TypeError) as exc:
            skipped += 1
            log.warning("skipping record %d: %s", lineno, exc)
    if skipped:
        log.warning("skipped %d of %d records", skipped, len(numbered))
    return events


def event_to_dict(ev: RawEvent) -> dict:
    """JSON-ready mapping; empty fields are omitted, extras are flattened."""
    out: dict = {}
    for name in CANONICAL_FIELDS:
        v = getattr(ev, name)
        if v is None:
            continue
        out[name] = v.isoformat() if isinstance(v, datetime) else v
    for key, v in ev.extra.items():
        if v is not None:
            out[key] = v
    return out


def serialize_events(events: Sequence[RawEvent]) -> str:
    """Line-delimited JSON; parse_events(serialize_events(x)) == x."""
    return "".join(json.dumps(event_to_dict(ev)) + "\n" for ev in events)


def load_events(path) -> list[RawEvent]:
    with open(path, encoding="utf-8") as fh:
        return parse_events(fh.read())


def save_events(events: Sequence[RawEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_events(events))


def compute_empty_rate(events: Sequence[RawEvent], column: str) -> float:
    """Fraction of events whose `column` is empty."""
    if not events:
        raise ValueError("cannot compute an empty rate over zero events")
    n_empty = sum(1 for ev in events if _is_empty(ev.column(column)))
    return n_empty / len(events)


def _extra_columns(events: Iterable[RawEvent]) -> list[str]:
    seen: dict[str, None] = {}
    for ev in events:
        for key in ev.extra:
            seen.setdefault(key)
    return list(seen)


def surviving_feature_columns(
    events: Sequence[RawEvent], threshold: float
) -> tuple[list[str], list[str]]:
    """(categorical, numeric) feature columns with empty rate <= threshold.

    The drop rule is strict: a column at exactly the threshold is retained.
    """
    categorical: list[str] = []
    numeric: list[str] = []
    for col in FEATURE_CANDIDATES + tuple(_extra_columns(events)):
        if compute_empty_rate(events, col) > threshold:
            continue
        (numeric if col in NUMERIC_FIELDS else categorical).append(col)
    return categorical, numeric


def clean(events: Sequence[RawEvent], cfg: CleaningConfig) -> list[InteractionRecord]:
    """Window-filter, prune empty-heavy columns, and label positives.

    Only events whose type signals buyer interest survive, all with label 1.
    Empty rates are measured on the full input, not the windowed subset.
    """
    cfg.validate()
    if not events:
        return []

    for key_col in ("buyer_address", "asset_name", "collection_slug"):
        if compute_empty_rate(events, key_col) > cfg.empty_rate_threshold:
            raise ConfigurationError(
                f"key column {key_col!r} exceeds the empty-rate threshold; "
                "cannot build interaction records"
            )
    cat_cols, num_cols = surviving_feature_columns(events, cfg.empty_rate_threshold)

    records: list[InteractionRecord] = []
    n_unkeyed = 0
    for ev in events:
        if ev.created_date is None:
            continue
        if not cfg.window_start <= ev.created_date <= cfg.window_end:
            continue
        if ev.event_type not in POSITIVE_EVENT_TYPES:
            continue
        asset_key = ev.asset_name or ev.asset_id
        if _is_empty(ev.buyer_address) or _is_empty(asset_key):
            n_unkeyed += 1
            continue
        cat = {c: str(ev.column(c)) for c in cat_cols if not _is_empty(ev.column(c))}
        num = {c: float(ev.column(c)) for c in num_cols if not _is_empty(ev.column(c))}
        records.append(
            InteractionRecord(
                label=1,
                user=ev.buyer_address,
                asset_key=asset_key,
                collection_slug=ev.collection_slug or "",
                categorical_features=cat,
                numeric_features=num,
            )
        )
    if n_unkeyed:
        log.warning("dropped %d positive events lacking a user or asset key", n_unkeyed)
    return records


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_negatives(
    positives: Sequence[InteractionRecord], cfg: CleaningConfig
) -> list[InteractionRecord]:
    """Uniformly sample unobserved (user, asset) pairs as label-0 records.

    Target count is round(negative_ratio * len(positives)), capped at the
    pool size. Each negative copies the asset's features from that asset's
    most recent positive record.
    """
    if not positives:
        raise ValueError("sample_negatives requires a non-empty positive set")
    users = sorted({r.user for r in positives})
    assets = sorted({r.asset_key for r in positives})
    positive_pairs = {(r.user, r.asset_key) for r in positives}
    pool = [(u, a) for u in users for a in assets if (u, a) not in positive_pairs]
    if not pool:
        log.warning("negative pool is empty: every user interacted with every asset")
        return []

    target = min(_round_half_up(cfg.negative_ratio * len(positives)), len(pool))
    rng = random.Random(cfg.rng_seed)
    chosen = rng.sample(pool, target)

    latest: dict[str, InteractionRecord] = {}
    for rec in positives:
        latest[rec.asset_key] = rec

    negatives = []
    for user, asset_key in chosen:
        src = latest[asset_key]
        negatives.append(
            InteractionRecord(
                label=0,
                user=user,
                asset_key=asset_key,
                collection_slug=src.collection_slug,
                categorical_features=dict(src.categorical_features),
                numeric_features=dict(src.numeric_features),
            )
        )
    return negatives


def _mode(values: list[str]) -> str:
    counts: dict[str, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def group_records(
    records: Sequence[InteractionRecord], mode: str
) -> list[InteractionRecord]:
    """Re-key records by asset or by collection.

    asset_based keeps records as they are (asset_key is already the asset
    name). collection_based re-keys each record to its collection and
    replaces its features with per-collection aggregates: mean for numeric
    columns, mode for categorical (ties break to the smallest value).
    """
    if mode == "asset_based":
        # fresh feature dicts so callers can mutate grouped output safely
        return [
            dataclasses.replace(
                r,
                categorical_features=dict(r.categorical_features),
                numeric_features=dict(r.numeric_features),
            )
            for r in records
        ]
    if mode != "collection_based":
        raise ValueError(f"unknown grouping mode: {mode!r}")

    cat_values: dict[str, dict[str, list[str]]] = {}
    num_values: dict[str, dict[str, list[float]]] = {}
    for r in records:
        key = r.collection_slug
        cats = cat_values.setdefault(key, {})
        for col, v in r.categorical_features.items():
            cats.setdefault(col, []).append(v)
        nums = num_values.setdefault(key, {})
        for col, v in r.numeric_features.items():
            nums.setdefault(col, []).append(v)

    agg_cat = {
        key: {col: _mode(vals) for col, vals in cols.items()}
        for key, cols in cat_values.items()
    }
    agg_num = {
        key: {col: sum(vals) / len(vals) for col, vals in cols.items()}
        for key, cols in num_values.items()
    }
    return [
        InteractionRecord(
            label=r.label,
            user=r.user,
            asset_key=r.collection_slug,
            collection_slug=r.collection_slug,
            categorical_features=dict(agg_cat[r.collection_slug]),
            numeric_features=dict(agg_num[r.collection_slug]),
        )
        for r in records
    ]


def split_dataset(
    records: Sequence[InteractionRecord],
    fractions: tuple[float, float, float],
    seed: int,
    grouping: str = "asset_based",
) -> DatasetBundle:
    """Seeded shuffle, then contiguous train/validation/test slices.

    Slice sizes are floor(n * fraction); remainder records go to train.
    """
    f_train, f_val, f_test = fractions
    if min(fractions) < 0 or abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("split fractions must be non-negative and sum to 1")
    idx = list(range(len(records)))
    random.Random(seed).shuffle(idx)
    n = len(records)
    n_train = math.floor(n * f_train + 1e-9)
    n_val = math.floor(n * f_val + 1e-9)
    n_test = math.floor(n * f_test + 1e-9)
    n_train += n - (n_train + n_val + n_test)
    order = [records[i] for i in idx]
    return DatasetBundle(
        train=order[:n_train],
        validation=order[n_train : n_train + n_val],
        test=order[n_train + n_val :],
        grouping=grouping,
    )


# --- InteractionRecord JSONL I/O ---------------------------------------------


def record_to_dict(rec: InteractionRecord) -> dict:
    return {
        "label": rec.label,
        "user": rec.user,
        "asset_key": rec.asset_key,
        "collection_slug": rec.collection_slug,
        "categorical_features": rec.categorical_features,
        "numeric_features": rec.numeric_features,
    }


def record_from_dict(obj: dict) -> InteractionRecord:
    return InteractionRecord(
        label=int(obj["label"]),
        user=obj["user"],
        asset_key=obj["asset_key"],
        collection_slug=obj.get("collection_slug", ""),
        categorical_features=dict(obj.get("categorical_features", {})),
        numeric_features={k: float(v) for k, v in obj.get("numeric_features", {}).items()},
    )


def write_records(records: Sequence[InteractionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec)) + "\n")


def read_records(path) -> list[InteractionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(record_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
    return out
