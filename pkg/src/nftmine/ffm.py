"""Field/feature vocabularies and the libffm text codec.

A field is a column; a feature is one categorical value of that column
(or the column itself when numeric). Encoded rows are text lines of the
form `<label> <field>:<feature>:<value>`, one row per line. Feature id 0
is reserved for out-of-vocabulary values so serving can score unseen
users and assets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ingest import InteractionRecord

OOV_ID = 0

# Fields read from InteractionRecord attributes rather than feature maps.
ATTRIBUTE_FIELDS = ("user", "asset_key", "collection_slug")

KINDS = ("categorical", "numeric")
TRANSFORMS = ("none", "log10", "log10p1")


class FfmParseError(ValueError):
    """Malformed FFM text; message carries a byte offset or line number."""


@dataclass(frozen=True)
class FieldSpec:
    """Declaration of one input column for encoding."""

    name: str
    kind: str
    transform: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind: {self.kind!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"unknown transform: {self.transform!r}")
        if self.transform != "none" and self.kind != "numeric":
            raise ValueError("transforms apply to numeric fields only")


def apply_transform(value: float, transform: str) -> float:
    if transform == "log10":
        return math.log10(value)
    if transform == "log10p1":
        return math.log10(1.0 + value)
    return value


@dataclass
class Vocabulary:
    """Immutable field/feature index built from training records.

    Field ids are dense 0..n_fields-1 in declaration order. Feature ids
    are dense 1..n_features in first-occurrence order; 0 is reserved.
    """

    fields: list[FieldSpec]
    feature_index: dict[str, dict[str, int]] = field(default_factory=dict)
    numeric_index: dict[str, int] = field(default_factory=dict)
    n_features: int = 0

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    def field_id(self, name: str) -> int:
        for i, fs in enumerate(self.fields):
            if fs.name == name:
                return i
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "fields": [
                {"name": f.name, "kind": f.kind, "transform": f.transform}
                for f in self.fields
            ],
            "feature_index": self.feature_index,
            "numeric_index": self.numeric_index,
            "n_features": self.n_features,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Vocabulary":
        return cls(
            fields=[
                FieldSpec(f["name"], f["kind"], f.get("transform", "none"))
                for f in obj["fields"]
            ],
            feature_index={
                k: {v: int(i) for v, i in sub.items()}
                for k, sub in obj["feature_index"].items()
            },
            numeric_index={k: int(v) for k, v in obj["numeric_index"].items()},
            n_features=int(obj["n_features"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=False)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# Numeric columns with heavy right tails get a log transform by default.
PRICE_LIKE_COLUMNS = frozenset(
    {
        "total_price",
        "absolute_price_usd",
        "top_bid",
        "user_loyalty",
        "asset_loyalty",
        "collection_loyalty",
    }
)


def default_field_spec(
    categorical_cols: Sequence[str], numeric_cols: Sequence[str]
) -> list[FieldSpec]:
    """Identity fields first, then the surviving feature columns."""
    spec = [FieldSpec(name, "categorical") for name in ATTRIBUTE_FIELDS]
    spec.extend(FieldSpec(name, "categorical") for name in categorical_cols)
    spec.extend(
        FieldSpec(name, "numeric", "log10p1" if name in PRICE_LIKE_COLUMNS else "none")
        for name in numeric_cols
    )
    return spec


def save_field_spec(spec: Sequence[FieldSpec], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            [{"name": f.name, "kind": f.kind, "transform": f.transform} for f in spec],
            fh,
            indent=2,
        )
        fh.write("\n")


def load_field_spec(path) -> list[FieldSpec]:
    with open(path, encoding="utf-8") as fh:
        return [
            FieldSpec(f["name"], f["kind"], f.get("transform", "none"))
            for f in json.load(fh)
        ]


def _record_value(rec: InteractionRecord, fs: FieldSpec):
    """Raw value of a declared field on a record, or None when empty."""
    if fs.name in ATTRIBUTE_FIELDS:
        v = getattr(rec, fs.name)
        return v if v else None
    if fs.kind == "categorical":
        return rec.categorical_features.get(fs.name)
    return rec.numeric_features.get(fs.name)


def build_vocabulary(
    records: Sequence[InteractionRecord], field_spec: Sequence[FieldSpec]
) -> Vocabulary:
    """Assign dense feature ids by scanning records sequentially.

    Categorical values get ids at first occurrence; a numeric field gets
    its single id when first seen non-empty. Numeric fields that never
    appear are still allocated ids, after the scan, in declaration order.
    """
    if not field_spec:
        raise ValueError("field_spec must declare at least one field")
    names = [fs.name for fs in field_spec]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate field names: {', '.join(dupes)}")

    vocab = Vocabulary(fields=list(field_spec))
    vocab.feature_index = {fs.name: {} for fs in field_spec if fs.kind == "categorical"}
    next_id = 1
    for rec in records:
        for fs in field_spec:
            v = _record_value(rec, fs)
            if v is None:
                continue
            if fs.kind == "categorical":
                sub = vocab.feature_index[fs.name]
                if str(v) not in sub:
                    sub[str(v)] = next_id
                    next_id += 1
            elif fs.name not in vocab.numeric_index:
                vocab.numeric_index[fs.name] = next_id
                next_id += 1
    for fs in field_spec:
        if fs.kind == "numeric" and fs.name not in vocab.numeric_index:
            vocab.numeric_index[fs.name] = next_id
            next_id += 1
    vocab.n_features = next_id - 1
    return vocab


@dataclass
class FfmRow:
    """One encoded example: label plus (field, feature, value) entries.

    At most one entry per field; entries are kept sorted by field id.
    """

    label: int
    entries: list[tuple[int, int, float]] = field(default_factory=list)


def encode_record(rec: InteractionRecord, vocab: Vocabulary) -> FfmRow:
    """Encode one record against a built vocabulary.

    Present categorical values map to their id with value 1; unseen ones
    to the reserved OOV id 0. Numeric values pass through their declared
    transform. Empty fields are omitted entirely.
    """
    entries: list[tuple[int, int, float]] = []
    for fid, fs in enumerate(vocab.fields):
        v = _record_value(rec, fs)
        if v is None:
            continue
        if fs.kind == "categorical":
            entries.append((fid, vocab.feature_index[fs.name].get(str(v), OOV_ID), 1.0))
        else:
            entries.append(
                (fid, vocab.numeric_index[fs.name], apply_transform(float(v), fs.transform))
            )
    return FfmRow(label=rec.label, entries=entries)


def _render_value(v: float) -> str:
    # Integral values render bare ("1", not "1.0"); everything else uses
    # the shortest decimal string that round-trips through float.
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


def render_line(row: FfmRow) -> str:
    parts = [str(row.label)]
    parts.extend(f"{f}:{j}:{_render_value(v)}" for f, j, v in row.entries)
    return " ".join(parts)


def parse_line(line: str) -> FfmRow:
    """Parse one FFM text line; entries may arrive in any field order."""
    if line != line.strip() or "  " in line:
        raise FfmParseError("byte offset 0: leading, trailing, or doubled whitespace")
    tokens = line.split(" ")
    if not tokens or tokens[0] not in ("0", "1"):
        raise FfmParseError(f"byte offset 0: label must be 0 or 1, got {tokens[0]!r}")
    label = int(tokens[0])

    entries: list[tuple[int, int, float]] = []
    seen_fields: set[int] = set()
    offset = len(tokens[0]) + 1
    for tok in tokens[1:]:
        parts = tok.split(":")
        if len(parts) != 3:
            raise FfmParseError(f"byte offset {offset}: expected field:feature:value, got {tok!r}")
        try:
            fid = int(parts[0])
            feat = int(parts[1])
            value = float(parts[2])
        except ValueError:
            raise FfmParseError(f"byte offset {offset}: malformed token {tok!r}") from None
        if fid < 0 or feat < 0:
            raise FfmParseError(f"byte offset {offset}: negative id in {tok!r}")
        if not math.isfinite(value):
            raise FfmParseError(f"byte offset {offset}: non-finite value in {tok!r}")
        if fid in seen_fields:
            raise FfmParseError(f"byte offset {offset}: duplicate field id {fid}")
        seen_fields.add(fid)
        entries.append((fid, feat, value))
        offset += len(tok) + 1
    entries.sort(key=lambda e: e[0])
    return FfmRow(label=label, entries=entries)


def write_dataset(rows: Sequence[FfmRow], path) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        for row in rows:
            fh.write(render_line(row) + "\n")


def read_dataset(path) -> list[FfmRow]:
    out = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.rstrip("\n")
            if not stripped:
                continue
            try:
                out.append(parse_line(stripped))
            except FfmParseError as exc:
                raise FfmParseError(f"line {lineno}: {exc}") from None
    return out


def rows_to_arrays(rows: Sequence[FfmRow], n_fields: int, n_features: int):
    """Pack rows into dense per-field arrays for the numeric models.

    Returns (feat_ids, values, mask, labels): feat_ids is (B, n_fields)
    int64, values and mask are (B, n_fields) float64 with mask 0 marking
    absent fields, labels is (B,) float64.
    """
    B = len(rows)
    feat_ids = np.zeros((B, n_fields), dtype=np.int64)
    values = np.zeros((B, n_fields), dtype=np.float64)
    mask = np.zeros((B, n_fields), dtype=np.float64)
    labels = np.zeros(B, dtype=np.float64)
    for b, row in enumerate(rows):
        labels[b] = row.label
        for fid, feat, value in row.entries:
            if not 0 <= fid < n_fields:
                raise ValueError(f"row {b}: field id {fid} outside [0, {n_fields})")
            if not 0 <= feat <= n_features:
                raise ValueError(f"row {b}: feature id {feat} outside [0, {n_features}]")
            feat_ids[b, fid] = feat
            values[b, fid] = value
            mask[b, fid] = 1.0
    return feat_ids, values, mask, labels
