"""NFT marketplace recommender engine.

End-to-end pipeline: ingest raw marketplace events, clean and label them,
encode datasets in the libffm text format, train an xDeepFM scorer plus
classical baselines, evaluate with AUC/logloss, and serve top-K per-user
recommendations over HTTP.
"""

__version__ = "0.1.0"
