"""Versioned binary container for trained models.

Layout, stable across format versions:

  bytes 0..3    magic b"NFTM"
  bytes 4..7    format version, u32 little-endian
  bytes 8..11   header length, u32 little-endian
  then          JSON header (utf-8): model_kind, config, vocab_ref, and
                a tensor directory of {name, shape} entries
  then          each tensor as raw little-endian float64, C order, in
                directory order
  last 4 bytes  CRC32 of every preceding byte, u32 little-endian

Loading distinguishes foreign files (FormatError), cut-off files
(TruncatedFileError), flipped bytes (ChecksumError), and files from a
different format version (VersionError); corruption is never silent.
"""

from __future__ import annotations

import json
import struct
import zlib
from typing import Sequence

import numpy as np

from .xdeepfm import ModelConfig, ModelParams

MAGIC = b"NFTM"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    """Base class for unloadable model files."""


class FormatError(ModelFileError):
    pass


class VersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


def write_container(
    path,
    model_kind: str,
    config: dict,
    vocab_ref: str,
    tensors: Sequence[tuple[str, np.ndarray]],
) -> None:
    """Serialize named float64 tensors under the standard container."""
    header = {
        "model_kind": model_kind,
        "config": config,
        "vocab_ref": vocab_ref,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for _, tensor in tensors:
        blob += np.ascontiguousarray(tensor, dtype="<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def read_container(path) -> tuple[str, dict, str, dict[str, np.ndarray], int]:
    """Parse and verify a container; returns (kind, config, vocab_ref,
    tensors by name, crc32 of the stored payload)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise TruncatedFileError(f"file is {len(data)} bytes; minimum container is 16")
    if data[:4] != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}; not a model container")
    version = struct.unpack("<I", data[4:8])[0]
    header_len = struct.unpack("<I", data[8:12])[0]
    if len(data) < 12 + header_len + 4:
        raise TruncatedFileError("file ends inside the header")

    stored_crc = struct.unpack("<I", data[-4:])[0]
    crc_ok = zlib.crc32(data[:-4]) == stored_crc
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        if not crc_ok:
            raise ChecksumError("checksum mismatch (header also unreadable)") from None
        raise FormatError(f"undecodable header: {exc}") from None

    payload = sum(
        8 * int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"]
    )
    expected = 12 + header_len + payload + 4
    if len(data) < expected:
        raise TruncatedFileError(
            f"file is {len(data)} bytes but the directory implies {expected}"
        )
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes after the checksum")
    if not crc_ok:
        raise ChecksumError("checksum mismatch; file is corrupted")
    if version != FORMAT_VERSION:
        raise VersionError(f"format version {version}; this reader handles {FORMAT_VERSION}")

    tensors: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += 8 * count
    return header["model_kind"], header["config"], header["vocab_ref"], tensors, stored_crc


def save_model(params: ModelParams, cfg: ModelConfig, vocab_ref: str, path) -> None:
    write_container(path, "xdeepfm", cfg.to_dict(), vocab_ref, params.tensors())


def params_from_tensors(cfg: ModelConfig, tensors: dict[str, np.ndarray]) -> ModelParams:
    """Reassemble ModelParams from a container's tensor directory."""
    try:
        cin = [tensors[f"cin_filter_{k}"] for k in range(len(cfg.cin_layer_sizes))]
        dnn_w = [tensors[f"dnn_weight_{l}"] for l in range(len(cfg.dnn_layer_sizes))]
        dnn_b = [tensors[f"dnn_bias_{l}"] for l in range(len(cfg.dnn_layer_sizes))]
        return ModelParams(
            n_fields=cfg.n_fields,
            embeddings=tensors["embeddings"],
            linear_weights=tensors["linear_weights"],
            bias=tensors["bias"],
            cin_filters=cin,
            dnn_weights=dnn_w,
            dnn_biases=dnn_b,
            output_weights=tensors["output_weights"],
        )
    except KeyError as exc:
        raise FormatError(f"tensor directory is missing {exc}") from None


def load_model(path) -> tuple[ModelParams, ModelConfig, str]:
    kind, config, vocab_ref, tensors, _ = read_container(path)
    if kind != "xdeepfm":
        raise FormatError(f"expected an xdeepfm container, found {kind!r}")
    cfg = ModelConfig.from_dict(config)
    return params_from_tensors(cfg, tensors), cfg, vocab_ref
