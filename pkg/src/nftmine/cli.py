"""Command-line interface tying the pipeline together.

Subcommands mirror the pipeline stages: synth, ingest, eda, encode,
train, baseline, eval, recommend, serve. Exit codes: 0 success, 1 usage
error, 2 data error. Log verbosity comes from the NFTMINE_LOG env var.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import urllib.parse
import urllib.request
from datetime import timedelta
from pathlib import Path

from . import baselines, eda, ffm, ingest, metrics, model_io, serving, synth, xdeepfm

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "validation", "test")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this tool reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_duration(text: str) -> timedelta:
    m = re.fullmatch(r"(\d+)([smhd])", text)
    if not m:
        raise ValueError(f"bad duration {text!r}; use forms like 30m, 1h, 2d")
    n = int(m.group(1))
    unit = {"s": "seconds", "m": "minutes", "h": "hours", "d": "days"}[m.group(2)]
    return timedelta(**{unit: n})


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError("split must be three comma-separated fractions")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _cleaning_config(args) -> ingest.CleaningConfig:
    kwargs = {
        "empty_rate_threshold": args.threshold,
        "negative_ratio": args.neg_ratio,
        "rng_seed": args.seed,
    }
    if args.window_start:
        kwargs["window_start"] = ingest._parse_timestamp(args.window_start)
    if args.window_end:
        kwargs["window_end"] = ingest._parse_timestamp(args.window_end)
    return ingest.CleaningConfig(**kwargs)


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_users=args.users,
        n_assets=args.assets,
        n_collections=args.collections,
        n_events=args.events,
        n_clusters=args.clusters,
        seed=args.seed,
        interaction_structure=args.structure,
    )
    events = synth.generate_synthetic(spec)
    ingest.save_events(events, args.out)
    print(json.dumps({"events": len(events), "out": str(args.out)}))
    return 0


def cmd_ingest(args) -> int:
    events = ingest.load_events(args.input)
    cfg = _cleaning_config(args)
    positives = ingest.clean(events, cfg)
    if not positives:
        print("error: no positive interactions survived cleaning", file=sys.stderr)
        return 2
    negatives = ingest.sample_negatives(positives, cfg)
    grouping = f"{args.grouping}_based"
    records = ingest.group_records(positives + negatives, grouping)
    bundle = ingest.split_dataset(records, _parse_fractions(args.split), args.seed, grouping)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        ingest.write_records(getattr(bundle, name), out / f"{name}.jsonl")
    cat_cols, num_cols = ingest.surviving_feature_columns(events, cfg.empty_rate_threshold)
    ffm.save_field_spec(ffm.default_field_spec(cat_cols, num_cols), out / "fields.json")
    serving.build_catalog(records).save(out / "catalog.json")
    print(
        json.dumps(
            {
                "positives": len(positives),
                "negatives": len(negatives),
                "train": len(bundle.train),
                "validation": len(bundle.validation),
                "test": len(bundle.test),
                "out": str(out),
            }
        )
    )
    return 0


def cmd_eda(args) -> int:
    events = ingest.load_events(args.input)
    cfg = _cleaning_config(args)
    records = ingest.clean(events, cfg)
    if len(records) < 2:
        print("error: fewer than 2 cleaned records; cannot analyze", file=sys.stderr)
        return 2
    numeric_cols = sorted({c for r in records for c in r.numeric_features})
    report = eda.build_report(events, records, numeric_cols, _parse_duration(args.bucket))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report)
    print(json.dumps({"out": str(args.out)}))
    return 0


def cmd_encode(args) -> int:
    src = Path(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields_path = args.fields or (src / "fields.json" if src.is_dir() else None)
    if fields_path is None:
        print("error: --fields is required when --input is a single file", file=sys.stderr)
        return 2
    spec = ffm.load_field_spec(fields_path)

    if src.is_dir():
        splits = {n: ingest.read_records(src / f"{n}.jsonl") for n in SPLIT_NAMES}
        vocab = ffm.build_vocabulary(splits["train"], spec)
        for name, records in splits.items():
            rows = [ffm.encode_record(r, vocab) for r in records]
            ffm.write_dataset(rows, out / f"{name}.ffm")
    else:
        records = ingest.read_records(src)
        vocab = ffm.build_vocabulary(records, spec)
        ffm.write_dataset([ffm.encode_record(r, vocab) for r in records], out / f"{src.stem}.ffm")
    vocab.save(out / "vocab.json")
    print(json.dumps({"n_fields": vocab.n_fields, "n_features": vocab.n_features, "out": str(out)}))
    return 0


def cmd_train(args) -> int:
    data = Path(args.data)
    vocab = ffm.Vocabulary.load(data / "vocab.json")
    train_rows = ffm.read_dataset(data / "train.ffm")
    val_path = data / "validation.ffm"
    val_rows = ffm.read_dataset(val_path) if val_path.exists() else []

    overrides = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides.setdefault("n_fields", vocab.n_fields)
    overrides.setdefault("n_features", vocab.n_features)
    cfg = xdeepfm.ModelConfig.from_dict(overrides)

    params, report = xdeepfm.train(cfg, train_rows, val_rows)
    model_io.save_model(params, cfg, str(data / "vocab.json"), args.out)
    print(json.dumps({"model": str(args.out), "report": report.to_dict()}))
    return 0


def cmd_baseline(args) -> int:
    data = Path(args.data)
    vocab = ffm.Vocabulary.load(data / "vocab.json")
    train_rows = ffm.read_dataset(data / "train.ffm")
    vocab_ref = str(data / "vocab.json")
    if args.algo == "lr":
        cfg = baselines.LrConfig(
            n_fields=vocab.n_fields,
            n_features=vocab.n_features,
            epochs=args.epochs if args.epochs is not None else 50,
            seed=args.seed if args.seed is not None else 0,
        )
        model = baselines.lr_train(train_rows, cfg)
        model_io.write_container(args.out, "lr", cfg.to_dict(), vocab_ref, model.tensors())
    else:
        model = baselines.nb_train(train_rows, vocab.n_features)
        model_io.write_container(
            args.out, "nb", {"n_features": vocab.n_features}, vocab_ref, model.tensors()
        )
    print(json.dumps({"algo": args.algo, "model": str(args.out)}))
    return 0


def cmd_eval(args) -> int:
    model = serving.LoadedModel.load(args.model)
    rows = ffm.read_dataset(args.data)
    if not rows:
        print("error: empty evaluation dataset", file=sys.stderr)
        return 2
    probs = model.predict(rows)
    labels = [r.label for r in rows]
    result = metrics.evaluate(probs, labels)
    print(json.dumps(result.to_dict()))
    return 0


def cmd_recommend(args) -> int:
    if args.url:
        query = {"user": args.user, "k": str(args.k)}
        if args.collection:
            query["collection"] = args.collection
        if args.exclude_owned:
            query["exclude_owned"] = "true"
        url = f"{args.url.rstrip('/')}/recommend?{urllib.parse.urlencode(query)}"
        with urllib.request.urlopen(url) as resp:
            print(resp.read().decode("utf-8"))
        return 0
    if not (args.model and args.catalog and args.vocab):
        print("error: provide --url, or --model with --catalog and --vocab", file=sys.stderr)
        return 2
    model = serving.LoadedModel.load(args.model)
    catalog = serving.Catalog.load(args.catalog)
    vocab = ffm.Vocabulary.load(args.vocab)
    rec = serving.recommend(
        args.user, args.k, args.collection, model, catalog, vocab, args.exclude_owned
    )
    doc = {"user": args.user, "k": args.k, "collection": args.collection}
    doc.update(rec.to_dict())
    print(json.dumps(doc))
    return 0


def cmd_serve(args) -> int:
    from . import service

    service.serve_http(args.model, args.catalog, args.vocab, args.host, args.port)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="nftmine", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic marketplace events")
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--assets", type=int, default=500)
    p.add_argument("--collections", type=int, default=20)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--events", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--structure", choices=["clustered", "uniform"], default="clustered")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="clean events and build labeled datasets")
    p.add_argument("--input", required=True)
    p.add_argument("--window-start", default=None)
    p.add_argument("--window-end", default=None)
    p.add_argument("--threshold", type=float, default=0.25)
    p.add_argument("--neg-ratio", type=float, default=1.0)
    p.add_argument("--grouping", choices=["asset", "collection"], default="asset")
    p.add_argument("--split", default="0.8,0.1,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("eda", help="write the exploratory statistics report")
    p.add_argument("--input", required=True)
    p.add_argument("--bucket", default="1h")
    p.add_argument("--window-start", default=None)
    p.add_argument("--window-end", default=None)
    p.add_argument("--threshold", type=float, default=0.25)
    p.add_argument("--neg-ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eda)

    p = sub.add_parser("encode", help="build a vocabulary and encode records")
    p.add_argument("--input", required=True)
    p.add_argument("--fields", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the xDeepFM scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("baseline", help="train a classical baseline")
    p.add_argument("--algo", choices=["lr", "nb"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="evaluate a model on an encoded dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recommend", help="top-K recommendations, local or via HTTP")
    p.add_argument("--user", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--collection", default=None)
    p.add_argument("--exclude-owned", action="store_true")
    p.add_argument("--url", default=None, help="base URL of a running service")
    p.add_argument("--model", default=None)
    p.add_argument("--catalog", default=None)
    p.add_argument("--vocab", default=None)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("serve", help="run the recommendation HTTP service")
    p.add_argument("--model", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def run_cli(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NFTMINE_LOG", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        log.debug("command failed", exc_info=exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
