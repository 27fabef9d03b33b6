"""Shared fixtures: one small end-to-end pipeline built per session."""

from pathlib import Path

import pytest

from nftmine import ffm, ingest, model_io, serving, synth, xdeepfm

SPLIT_NAMES = ("train", "validation", "test")


@pytest.fixture(scope="session")
def pipeline_dir(tmp_path_factory) -> Path:
    """Synthetic events taken through ingest, encode, and a short train."""
    root = tmp_path_factory.mktemp("pipeline")
    spec = synth.SynthSpec(
        n_users=40, n_assets=80, n_collections=8, n_clusters=4,
        n_events=3000, seed=11,
    )
    events = synth.generate_synthetic(spec)
    ingest.save_events(events, root / "events.jsonl")

    cfg = ingest.CleaningConfig(rng_seed=11)
    positives = ingest.clean(events, cfg)
    negatives = ingest.sample_negatives(positives, cfg)
    records = positives + negatives
    bundle = ingest.split_dataset(records, (0.8, 0.1, 0.1), seed=11)
    for name in SPLIT_NAMES:
        ingest.write_records(getattr(bundle, name), root / f"{name}.jsonl")

    cat_cols, num_cols = ingest.surviving_feature_columns(events, cfg.empty_rate_threshold)
    field_spec = ffm.default_field_spec(cat_cols, num_cols)
    ffm.save_field_spec(field_spec, root / "fields.json")
    vocab = ffm.build_vocabulary(bundle.train, field_spec)
    vocab.save(root / "vocab.json")
    splits = {}
    for name in SPLIT_NAMES:
        rows = [ffm.encode_record(r, vocab) for r in getattr(bundle, name)]
        ffm.write_dataset(rows, root / f"{name}.ffm")
        splits[name] = rows

    serving.build_catalog(records).save(root / "catalog.json")

    mcfg = xdeepfm.ModelConfig(
        n_fields=vocab.n_fields, n_features=vocab.n_features,
        embedding_dim=4, cin_layer_sizes=(4,), dnn_layer_sizes=(16,),
        epochs=2, seed=11,
    )
    params, _ = xdeepfm.train(mcfg, splits["train"], splits["validation"])
    model_io.save_model(params, mcfg, str(root / "vocab.json"), root / "model.nftm")
    return root
