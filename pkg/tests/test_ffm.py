"""Vocabulary building and the libffm text codec."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nftmine.ffm import (
    FfmParseError,
    FfmRow,
    FieldSpec,
    Vocabulary,
    build_vocabulary,
    default_field_spec,
    encode_record,
    load_field_spec,
    parse_line,
    read_dataset,
    render_line,
    rows_to_arrays,
    save_field_spec,
    write_dataset,
)
from nftmine.ingest import InteractionRecord


def rec(user="u1", asset="a1", coll="c1", cats=None, nums=None, label=1):
    return InteractionRecord(
        label=label, user=user, asset_key=asset, collection_slug=coll,
        categorical_features=cats or {}, numeric_features=nums or {},
    )


# --- vocabulary ---------------------------------------------------------------

def test_first_occurrence_ids():
    spec = [FieldSpec("color", "categorical")]
    records = [rec(cats={"color": v}) for v in ["a", "b", "a"]]
    vocab = build_vocabulary(records, spec)
    assert vocab.feature_index["color"] == {"a": 1, "b": 2}
    assert vocab.n_features == 2


def test_numeric_field_single_id():
    spec = [FieldSpec("color", "categorical"), FieldSpec("price", "numeric")]
    records = [rec(cats={"color": "a"}, nums={"price": 3.0}),
               rec(cats={"color": "b"}, nums={"price": 9.0})]
    vocab = build_vocabulary(records, spec)
    assert vocab.numeric_index["price"] == 2
    assert vocab.n_features == 3


def test_never_seen_numeric_still_allocated():
    spec = [FieldSpec("price", "numeric")]
    vocab = build_vocabulary([rec()], spec)
    assert vocab.numeric_index["price"] == 1


def test_shuffled_records_same_feature_count():
    # independent count of distinct values says what n_features must be
    spec = [FieldSpec("color", "categorical"), FieldSpec("size", "categorical")]
    records = [rec(cats={"color": c, "size": s})
               for c, s in [("r", "s"), ("g", "m"), ("b", "s"), ("r", "l")]]
    distinct = len({r.categorical_features["color"] for r in records}) + len(
        {r.categorical_features["size"] for r in records}
    )
    forward = build_vocabulary(records, spec)
    backward = build_vocabulary(records[::-1], spec)
    assert forward.n_features == backward.n_features == distinct


def test_duplicate_field_names_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        build_vocabulary([rec()], [FieldSpec("x", "numeric"), FieldSpec("x", "numeric")])


def test_empty_field_spec_rejected():
    with pytest.raises(ValueError):
        build_vocabulary([rec()], [])


def test_vocabulary_json_round_trip(tmp_path):
    spec = [FieldSpec("user", "categorical"), FieldSpec("price", "numeric", "log10p1")]
    vocab = build_vocabulary([rec(nums={"price": 5.0})], spec)
    vocab.save(tmp_path / "vocab.json")
    loaded = Vocabulary.load(tmp_path / "vocab.json")
    assert loaded == vocab


def test_field_spec_validation():
    with pytest.raises(ValueError):
        FieldSpec("x", "weird")
    with pytest.raises(ValueError):
        FieldSpec("x", "numeric", "sqrt")
    with pytest.raises(ValueError):
        FieldSpec("x", "categorical", "log10p1")


def test_field_spec_file_round_trip(tmp_path):
    spec = default_field_spec(["payment_token"], ["total_price", "num_sales"])
    save_field_spec(spec, tmp_path / "fields.json")
    assert load_field_spec(tmp_path / "fields.json") == spec
    assert spec[0].name == "user"
    by_name = {f.name: f for f in spec}
    assert by_name["total_price"].transform == "log10p1"
    assert by_name["num_sales"].transform == "none"


# --- encoding -----------------------------------------------------------------

@pytest.fixture
def small_vocab():
    spec = [
        FieldSpec("user", "categorical"),
        FieldSpec("collection_slug", "categorical"),
        FieldSpec("price", "numeric"),
    ]
    records = [rec(user=f"u{i}", coll=f"c{i % 3}", nums={"price": float(i)})
               for i in range(8)]
    return build_vocabulary(records, spec), records


def test_encode_known_record(small_vocab):
    vocab, records = small_vocab
    row = encode_record(records[2], vocab)
    assert row.label == 1
    assert len(row.entries) == 3
    fids = [f for f, _, _ in row.entries]
    assert fids == [0, 1, 2]
    assert row.entries[2][2] == 2.0


def test_encode_unseen_category_gets_oov(small_vocab):
    vocab, _ = small_vocab
    row = encode_record(rec(user="stranger", coll="c0", nums={"price": 1.0}), vocab)
    assert row.entries[0] == (0, 0, 1.0)


def test_encode_empty_fields_omitted(small_vocab):
    vocab, _ = small_vocab
    row = encode_record(
        InteractionRecord(label=0, user="", asset_key="a", collection_slug=""), vocab
    )
    assert row.entries == []
    assert row.label == 0


def test_encode_applies_log_transform():
    spec = [FieldSpec("price", "numeric", "log10p1")]
    vocab = build_vocabulary([rec(nums={"price": 9.0})], spec)
    row = encode_record(rec(nums={"price": 99.0}), vocab)
    assert row.entries[0][2] == pytest.approx(math.log10(100.0))


def test_encode_deterministic(small_vocab):
    vocab, records = small_vocab
    assert encode_record(records[5], vocab) == encode_record(records[5], vocab)


# --- text codec ---------------------------------------------------------------

def test_documented_line_round_trips_exactly():
    line = "1 0:7:1 1:42:1 2:100:3.5"
    row = parse_line(line)
    assert row.label == 1
    assert len(row.entries) == 3
    assert row.entries == [(0, 7, 1.0), (1, 42, 1.0), (2, 100, 3.5)]
    assert render_line(row) == line


def test_bare_label_line():
    row = parse_line("0")
    assert row.label == 0 and row.entries == []
    assert render_line(row) == "0"


def test_unsorted_entries_accepted_and_sorted():
    row = parse_line("1 2:5:1 0:3:2.5")
    assert [f for f, _, _ in row.entries] == [0, 2]


def test_duplicate_field_id_rejected():
    with pytest.raises(FfmParseError, match="duplicate field id"):
        parse_line("1 0:3:1 0:4:1")


def test_malformed_token_cites_byte_offset():
    # "1 " is 2 bytes and "0:3:1 " 6 more, so the bad token starts at 8
    with pytest.raises(FfmParseError, match="byte offset 8"):
        parse_line("1 0:3:1 nope")


def test_bad_label_rejected():
    for line in ["2 0:1:1", "x", "-1 0:1:1"]:
        with pytest.raises(FfmParseError):
            parse_line(line)


def test_nonfinite_and_negative_ids_rejected():
    with pytest.raises(FfmParseError, match="non-finite"):
        parse_line("1 0:1:inf")
    with pytest.raises(FfmParseError, match="negative"):
        parse_line("1 0:-1:1")


def test_whitespace_strictness():
    for line in ["1  0:1:1", " 1 0:1:1", "1 0:1:1 "]:
        with pytest.raises(FfmParseError):
            parse_line(line)


def test_integral_values_render_bare():
    assert render_line(FfmRow(1, [(0, 1, 3.0)])) == "1 0:1:3"
    assert render_line(FfmRow(1, [(0, 1, 3.5)])) == "1 0:1:3.5"


@given(
    st.lists(
        st.tuples(
            st.integers(0, 30),
            st.integers(0, 1000),
            st.floats(allow_nan=False, allow_infinity=False, width=64),
        ),
        max_size=12,
        unique_by=lambda e: e[0],
    ),
    st.integers(0, 1),
)
@settings(max_examples=300, deadline=None)
def test_render_parse_identity(entries, label):
    row = FfmRow(label=label, entries=sorted(entries, key=lambda e: e[0]))
    again = parse_line(render_line(row))
    assert again.label == row.label
    assert again.entries == row.entries
    # canonical lines are a fixed point of parse-then-render
    assert render_line(again) == render_line(row)


def test_dataset_file_round_trip(tmp_path):
    rows = [
        FfmRow(1, [(0, 7, 1.0), (1, 42, 1.0), (2, 100, 3.5)]),
        FfmRow(0, []),
        FfmRow(0, [(3, 0, -2.25)]),
    ]
    path = tmp_path / "rows.ffm"
    write_dataset(rows, path)
    content = path.read_bytes()
    assert content.endswith(b"\n")
    content.decode("ascii")
    assert read_dataset(path) == rows


def test_malformed_file_line_number(tmp_path):
    lines = ["1 0:1:1"] * 56 + ["garbage here"]
    path = tmp_path / "bad.ffm"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FfmParseError, match="line 57"):
        read_dataset(path)


def test_rows_to_arrays_shapes_and_bounds():
    rows = [FfmRow(1, [(0, 2, 1.0), (2, 5, 0.5)]), FfmRow(0, [(1, 0, 3.0)])]
    feat_ids, values, mask, labels = rows_to_arrays(rows, n_fields=3, n_features=5)
    assert feat_ids.shape == values.shape == mask.shape == (2, 3)
    assert mask.tolist() == [[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
    assert labels.tolist() == [1.0, 0.0]
    with pytest.raises(ValueError, match="row 0"):
        rows_to_arrays([FfmRow(1, [(0, 9, 1.0)])], n_fields=3, n_features=5)
    with pytest.raises(ValueError, match="field id"):
        rows_to_arrays([FfmRow(1, [(7, 1, 1.0)])], n_fields=3, n_features=5)
