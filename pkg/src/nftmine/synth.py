"""Synthetic marketplace event generator for tests and offline demos.

Stands in for a live-market scraper. Users belong to latent preference
clusters and assets to collections; the probability that a user transacts
on an asset is proportional to a planted cluster-by-collection affinity,
so factorization-style models have a real interaction signal to find
while purely additive models can only pick up collection popularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import timedelta

import numpy as np

from .ingest import DEFAULT_WINDOW_END, DEFAULT_WINDOW_START, RawEvent

EVENT_TYPES = ("successful", "bid_withdrawn", "created")
EVENT_TYPE_PROBS = (0.90, 0.06, 0.04)

# Log-scale spreads: collection popularity is mild, cluster affinity strong,
# so the multiplicative interaction carries most of the signal.
POPULARITY_SIGMA = 0.3
AFFINITY_SIGMA = 1.5

PRICE_LOG_MEAN = math.log(300.0)  # bulk of USD prices lands in 10..10000
PRICE_LOG_SIGMA = 1.15
ETH_USD = 3000.0


@dataclass(frozen=True)
class SynthSpec:
    n_users: int = 200
    n_assets: int = 500
    n_collections: int = 20
    n_events: int = 20000
    n_clusters: int = 4
    seed: int = 0
    interaction_structure: str = "clustered"

    def validate(self) -> None:
        for name in ("n_users", "n_assets", "n_collections", "n_events", "n_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.interaction_structure not in ("clustered", "uniform"):
            raise ValueError(
                f"unknown interaction_structure: {self.interaction_structure!r}"
            )


def generate_synthetic(spec: SynthSpec) -> list[RawEvent]:
    """Draw events from the planted-affinity model, sorted chronologically."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    n_u, n_a, n_c = spec.n_users, spec.n_assets, spec.n_collections
    user_cluster = np.arange(n_u) % spec.n_clusters
    asset_collection = np.arange(n_a) % n_c

    popularity = np.exp(POPULARITY_SIGMA * rng.standard_normal(n_c))
    if spec.interaction_structure == "clustered":
        affinity = popularity * np.exp(
            AFFINITY_SIGMA * rng.standard_normal((spec.n_clusters, n_c))
        )
    else:
        affinity = np.tile(popularity, (spec.n_clusters, 1))
    # Per-cluster sampling distribution over assets.
    asset_probs = affinity[:, asset_collection]
    asset_probs = asset_probs / asset_probs.sum(axis=1, keepdims=True)

    collection_loyalty = np.round(np.exp(rng.normal(4.0, 1.0, n_c)), 2)
    asset_loyalty = np.round(
        collection_loyalty[asset_collection] * (0.85 + 0.3 * rng.random(n_a)), 2
    )
    user_loyalty = np.round(np.exp(rng.normal(3.0, 1.0, n_u)), 2)

    users = rng.integers(0, n_u, spec.n_events)
    assets = np.array(
        [rng.choice(n_a, p=asset_probs[user_cluster[u]]) for u in users]
    )
    types = rng.choice(len(EVENT_TYPES), spec.n_events, p=EVENT_TYPE_PROBS)
    sellers = rng.integers(0, n_u, spec.n_events)
    usd = np.exp(rng.normal(PRICE_LOG_MEAN, PRICE_LOG_SIGMA, spec.n_events))
    tokens = rng.choice(["ETH", "WETH", "SOL"], spec.n_events, p=[0.7, 0.25, 0.05])
    num_sales = 1 + rng.poisson(2.0, spec.n_events)
    quantity_present = rng.random(spec.n_events) < 0.95
    top_bid_present = rng.random(spec.n_events) < 0.15

    span = (DEFAULT_WINDOW_END - DEFAULT_WINDOW_START).total_seconds()
    offsets = np.sort(rng.integers(0, int(span) + 1, spec.n_events))

    events: list[RawEvent] = []
    for i in range(spec.n_events):
        u, a = int(users[i]), int(assets[i])
        col = int(asset_collection[a])
        price_usd = round(float(usd[i]), 2)
        ev = RawEvent(
            event_id=f"ev-{i:06d}",
            event_type=EVENT_TYPES[types[i]],
            created_date=DEFAULT_WINDOW_START + timedelta(seconds=int(offsets[i])),
            asset_id=str(a),
            asset_name=f"asset-{a:04d}",
            asset_address=f"0xc{col:03x}",
            collection_slug=f"collection-{col:02d}",
            num_sales=int(num_sales[i]),
            buyer_address=f"0xu{u:04x}",
            seller_address=f"0xu{int(sellers[i]):04x}",
            payment_token=str(tokens[i]),
            total_price=round(price_usd / ETH_USD * 1e18, 0),
            absolute_price_usd=price_usd,
            user_loyalty=float(user_loyalty[u]),
            asset_loyalty=float(asset_loyalty[a]),
            collection_loyalty=float(collection_loyalty[col]),
        )
        if quantity_present[i]:
            ev.extra["quantity"] = "1"
        if top_bid_present[i]:
            ev.extra["top_bid"] = str(round(price_usd * 1.1, 2))
        events.append(ev)
    return events
