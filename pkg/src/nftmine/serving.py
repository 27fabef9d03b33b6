"""Recommendation serving: catalog, candidate generation, and ranking.

A Catalog snapshots each asset's latest known feature values from the
cleaned dataset. Serving pairs a user with every catalog asset (or the
slice matching a collection filter), encodes the pairs under the
training vocabulary, scores them with whichever model kind the file
holds, and returns the top K by probability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .baselines import (
    LrConfig,
    LrModel,
    NbModel,
    lr_predict_batch,
    nb_predict_batch,
)
from .ffm import FfmRow, Vocabulary, encode_record
from .ingest import InteractionRecord
from .model_io import FormatError, params_from_tensors, read_container
from .xdeepfm import ModelConfig, predict_batch


@dataclass
class CatalogEntry:
    collection_slug: str
    display_name: str
    categorical_features: dict[str, str] = field(default_factory=dict)
    numeric_features: dict[str, float] = field(default_factory=dict)


@dataclass
class Catalog:
    """Asset feature snapshot plus per-user ownership sets."""

    assets: dict[str, CatalogEntry] = field(default_factory=dict)
    owned: dict[str, set[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "assets": {
                key: {
                    "collection_slug": e.collection_slug,
                    "display_name": e.display_name,
                    "categorical_features": e.categorical_features,
                    "numeric_features": e.numeric_features,
                }
                for key, e in sorted(self.assets.items())
            },
            "owned": {u: sorted(a) for u, a in sorted(self.owned.items())},
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Catalog":
        cat = cls()
        for key, e in obj.get("assets", {}).items():
            cat.assets[key] = CatalogEntry(
                collection_slug=e.get("collection_slug", ""),
                display_name=e.get("display_name", key),
                categorical_features=dict(e.get("categorical_features", {})),
                numeric_features={
                    k: float(v) for k, v in e.get("numeric_features", {}).items()
                },
            )
        for user, keys in obj.get("owned", {}).items():
            cat.owned[user] = set(keys)
        return cat

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Catalog":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_catalog(records: Sequence[InteractionRecord]) -> Catalog:
    """Latest occurrence of each asset wins; ownership from positives."""
    cat = Catalog()
    for rec in records:
        cat.assets[rec.asset_key] = CatalogEntry(
            collection_slug=rec.collection_slug,
            display_name=rec.asset_key,
            categorical_features=dict(rec.categorical_features),
            numeric_features=dict(rec.numeric_features),
        )
        if rec.label == 1:
            cat.owned.setdefault(rec.user, set()).add(rec.asset_key)
    return cat


@dataclass
class LoadedModel:
    """A scoring model of any persisted kind, plus its identity string."""

    kind: str
    predictor: object
    model_version: str

    @classmethod
    def load(cls, path) -> "LoadedModel":
        kind, config, _vocab_ref, tensors, crc = read_container(path)
        version = f"v1:{crc:08x}"
        if kind == "xdeepfm":
            params = params_from_tensors(ModelConfig.from_dict(config), tensors)
            return cls(kind=kind, predictor=params, model_version=version)
        if kind == "lr":
            model = LrModel(
                weights=tensors["weights"],
                bias=tensors["bias"],
                config=LrConfig.from_dict(config),
            )
            return cls(kind=kind, predictor=model, model_version=version)
        if kind == "nb":
            model = NbModel(
                class_priors=tensors["class_priors"],
                means=tensors["means"],
                variances=tensors["variances"],
            )
            return cls(kind=kind, predictor=model, model_version=version)
        raise FormatError(f"unknown model kind {kind!r}")

    def predict(self, rows: Sequence[FfmRow]) -> np.ndarray:
        if self.kind == "xdeepfm":
            return predict_batch(self.predictor, rows)
        if self.kind == "lr":
            return lr_predict_batch(self.predictor, rows)
        return nb_predict_batch(self.predictor, rows)


@dataclass(frozen=True)
class Recommendation:
    user: str
    items: tuple[tuple[str, str, float], ...]

    def to_dict(self) -> dict:
        return {
            "user": self.user,
            "items": [
                {"asset_key": a, "collection_slug": c, "probability": p}
                for a, c, p in self.items
            ],
        }


def build_candidates(
    user: str,
    catalog: Catalog,
    vocab: Vocabulary,
    collection_filter: Optional[str] = None,
    exclude_owned: bool = False,
) -> tuple[list[str], list[FfmRow]]:
    """One encoded (user, asset) row per eligible catalog asset.

    Assets iterate in sorted key order so downstream tie-breaks are
    stable. Unknown users simply encode to the OOV feature id.
    """
    owned = catalog.owned.get(user, set()) if exclude_owned else set()
    keys = []
    rows = []
    for key in sorted(catalog.assets):
        entry = catalog.assets[key]
        if collection_filter is not None and entry.collection_slug != collection_filter:
            continue
        if key in owned:
            continue
        rec = InteractionRecord(
            label=0,
            user=user,
            asset_key=key,
            collection_slug=entry.collection_slug,
            categorical_features=entry.categorical_features,
            numeric_features=entry.numeric_features,
        )
        keys.append(key)
        rows.append(encode_record(rec, vocab))
    return keys, rows


def recommend(
    user: str,
    k: int,
    collection_filter: Optional[str],
    model: LoadedModel,
    catalog: Catalog,
    vocab: Vocabulary,
    exclude_owned: bool = False,
) -> Recommendation:
    """Score all candidates and keep the top k.

    Sorted by descending probability; bit-equal scores break ties toward
    the lexicographically smaller asset key.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    keys, rows = build_candidates(user, catalog, vocab, collection_filter, exclude_owned)
    if not keys:
        return Recommendation(user=user, items=())
    probs = model.predict(rows)
    order = sorted(range(len(keys)), key=lambda i: (-probs[i], keys[i]))
    items = tuple(
        (keys[i], catalog.assets[keys[i]].collection_slug, float(probs[i]))
        for i in order[:k]
    )
    return Recommendation(user=user, items=items)
