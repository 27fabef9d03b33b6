"""CLI exit codes, pipeline wiring, and output determinism."""

import io
import json
import threading
import time
from contextlib import redirect_stderr, redirect_stdout

import pytest

from nftmine.cli import run_cli
from nftmine.serving import Catalog


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = run_cli(list(argv))
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def cli_dir(tmp_path_factory):
    """Artifacts from one full CLI pass: synth -> ingest -> encode -> train."""
    root = tmp_path_factory.mktemp("cli")
    code, _, err = run(
        "synth", "--users", "12", "--assets", "30", "--collections", "5",
        "--clusters", "2", "--events", "600", "--seed", "3",
        "--out", str(root / "events.jsonl"),
    )
    assert code == 0, err
    code, _, err = run(
        "ingest", "--input", str(root / "events.jsonl"), "--seed", "3",
        "--out", str(root / "data"),
    )
    assert code == 0, err
    code, _, err = run(
        "encode", "--input", str(root / "data"), "--out", str(root / "enc"),
    )
    assert code == 0, err
    cfg = {
        "embedding_dim": 4, "cin_layer_sizes": [4], "dnn_layer_sizes": [8],
        "epochs": 2, "batch_size": 128, "seed": 3,
    }
    (root / "config.json").write_text(json.dumps(cfg))
    code, _, err = run(
        "train", "--data", str(root / "enc"), "--config", str(root / "config.json"),
        "--out", str(root / "model.nftm"),
    )
    assert code == 0, err
    return root


def test_no_arguments_is_usage_error():
    code, _, err = run()
    assert code == 1
    assert "error" in err


def test_unknown_subcommand_is_usage_error():
    assert run("frobnicate")[0] == 1


def test_missing_required_flag_is_usage_error():
    assert run("synth")[0] == 1
    assert run("eval", "--model", "x.nftm")[0] == 1


def test_missing_input_file_is_data_error(tmp_path):
    code, _, err = run(
        "ingest", "--input", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "d")
    )
    assert code == 2
    assert err.startswith("error:")


def test_bad_duration_is_data_error(cli_dir, tmp_path):
    code, _, err = run(
        "eda", "--input", str(cli_dir / "events.jsonl"), "--bucket", "fortnight",
        "--out", str(tmp_path / "r.json"),
    )
    assert code == 2
    assert "duration" in err


def test_pipeline_artifacts_exist(cli_dir):
    for name in ("train", "validation", "test"):
        assert (cli_dir / "data" / f"{name}.jsonl").exists()
        assert (cli_dir / "enc" / f"{name}.ffm").exists()
    assert (cli_dir / "data" / "fields.json").exists()
    assert (cli_dir / "data" / "catalog.json").exists()
    assert (cli_dir / "enc" / "vocab.json").exists()
    assert (cli_dir / "model.nftm").exists()


def test_synth_reports_counts(tmp_path):
    code, out, _ = run(
        "synth", "--users", "4", "--assets", "6", "--collections", "2",
        "--events", "50", "--out", str(tmp_path / "e.jsonl"),
    )
    assert code == 0
    assert json.loads(out)["events"] == 50


def test_eval_json_shape_and_determinism(cli_dir):
    argv = ("eval", "--model", str(cli_dir / "model.nftm"),
            "--data", str(cli_dir / "enc" / "test.ffm"))
    code, out1, _ = run(*argv)
    assert code == 0
    doc = json.loads(out1)
    assert set(doc) == {"auc", "logloss", "n_pos", "n_neg"}
    assert 0.0 <= doc["auc"] <= 1.0 and doc["logloss"] > 0.0
    assert run(*argv)[1] == out1


def test_eval_empty_dataset_is_data_error(cli_dir, tmp_path):
    empty = tmp_path / "empty.ffm"
    empty.write_text("")
    code, _, err = run("eval", "--model", str(cli_dir / "model.nftm"), "--data", str(empty))
    assert code == 2
    assert "empty" in err


def test_retrain_same_seed_byte_identical_model(cli_dir, tmp_path):
    code, _, err = run(
        "train", "--data", str(cli_dir / "enc"),
        "--config", str(cli_dir / "config.json"), "--out", str(tmp_path / "again.nftm"),
    )
    assert code == 0, err
    # wall time lives only in the stdout report, never in the artifact
    assert (tmp_path / "again.nftm").read_bytes() == (cli_dir / "model.nftm").read_bytes()


def test_baselines_train_and_evaluate(cli_dir, tmp_path):
    for algo in ("lr", "nb"):
        out_path = tmp_path / f"{algo}.nftm"
        code, out, err = run(
            "baseline", "--algo", algo, "--data", str(cli_dir / "enc"),
            "--epochs", "3", "--out", str(out_path),
        )
        assert code == 0, err
        assert json.loads(out) == {"algo": algo, "model": str(out_path)}
        code, out, _ = run("eval", "--model", str(out_path),
                           "--data", str(cli_dir / "enc" / "test.ffm"))
        assert code == 0
        assert 0.0 <= json.loads(out)["auc"] <= 1.0


def test_recommend_local_mode(cli_dir):
    catalog = Catalog.load(cli_dir / "data" / "catalog.json")
    user = sorted(catalog.owned)[0]
    collection = sorted(
        {e.collection_slug for e in catalog.assets.values()}
    )[0]
    code, out, _ = run(
        "recommend", "--user", user, "--k", "4", "--collection", collection,
        "--model", str(cli_dir / "model.nftm"),
        "--catalog", str(cli_dir / "data" / "catalog.json"),
        "--vocab", str(cli_dir / "enc" / "vocab.json"),
    )
    assert code == 0
    doc = json.loads(out)
    assert doc["user"] == user and doc["k"] == 4 and doc["collection"] == collection
    assert 1 <= len(doc["items"]) <= 4
    probs = [i["probability"] for i in doc["items"]]
    assert probs == sorted(probs, reverse=True)
    assert all(i["collection_slug"] == collection for i in doc["items"])


def test_recommend_without_source_is_data_error():
    code, _, err = run("recommend", "--user", "u1")
    assert code == 2
    assert "--url" in err


def test_encode_single_file_mode(cli_dir, tmp_path):
    code, _, err = run(
        "encode", "--input", str(cli_dir / "data" / "train.jsonl"),
        "--fields", str(cli_dir / "data" / "fields.json"), "--out", str(tmp_path),
    )
    assert code == 0, err
    assert (tmp_path / "train.ffm").exists() and (tmp_path / "vocab.json").exists()


def test_encode_single_file_requires_fields(cli_dir, tmp_path):
    code, _, err = run(
        "encode", "--input", str(cli_dir / "data" / "train.jsonl"),
        "--out", str(tmp_path),
    )
    assert code == 2
    assert "--fields" in err


def test_eda_report_written_and_stable(cli_dir, tmp_path):
    argv = ("eda", "--input", str(cli_dir / "events.jsonl"),
            "--out", str(tmp_path / "report.json"))
    code, _, err = run(*argv)
    assert code == 0, err
    first = (tmp_path / "report.json").read_bytes()
    doc = json.loads(first)
    assert set(doc) == {"univariate", "correlation", "bivariate", "trend"}
    assert run(*argv)[0] == 0
    assert (tmp_path / "report.json").read_bytes() == first


@pytest.fixture(scope="module")
def live_server(cli_dir):
    import uvicorn

    from nftmine.service import create_app

    app = create_app(
        cli_dir / "model.nftm",
        cli_dir / "data" / "catalog.json",
        cli_dir / "enc" / "vocab.json",
    )
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15.0
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)


def test_recommend_url_thin_client(cli_dir, live_server):
    catalog = Catalog.load(cli_dir / "data" / "catalog.json")
    user = sorted(catalog.owned)[0]
    code, out, _ = run("recommend", "--user", user, "--k", "3", "--url", live_server)
    assert code == 0
    doc = json.loads(out)
    assert doc["user"] == user and len(doc["items"]) == 3

    code2, out2, _ = run("recommend", "--user", user, "--k", "3",
                         "--url", live_server + "/")
    assert code2 == 0 and out2 == out  # trailing slash normalized
