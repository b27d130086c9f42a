"""Binary checkpoint format.

Layout (all integers little-endian)::

    8 bytes   magic  b"NICTRCKP"
    uint32    format version (1)
    uint32    header length H
    H bytes   UTF-8 JSON header (sorted keys): model/train config, schema
              text and hash, target types, node-input groups, and the
              ordered list of parameters with their shapes
    ...       each parameter as little-endian float64, C order, in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .hin import FeatureSchema, dump_schema, parse_schema
from .model import ModelConfig, ModelParams

MAGIC = b"NICTRCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def to_bytes(params: ModelParams, train_config: dict | None = None) -> bytes:
    header = {
        "model": params.config.to_dict(),
        "train": train_config or {},
        "schema": dump_schema(params.schema),
        "schema_hash": params.schema.digest(),
        "u_type": params.u_type,
        "v_type": params.v_type,
        "node_input": params.node_input,
        "params": [[name, list(a.shape)] for name, a in params.arrays.items()],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
    for a in params.arrays.values():
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(blob: bytes, schema: FeatureSchema | None = None) -> tuple[ModelParams, dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    stored = parse_schema(header["schema"])
    if stored.digest() != header["schema_hash"]:
        raise CheckpointError("schema hash mismatch inside checkpoint")
    if schema is not None and schema.digest() != header["schema_hash"]:
        raise CheckpointError("checkpoint was trained on a different schema")
    model = header["model"]
    model["active_kinds"] = tuple(model["active_kinds"])
    config = ModelConfig(**model)
    params = ModelParams(config, schema or stored, {k: list(v) for k, v in header["node_input"].items()},
                         header["u_type"], header["v_type"])
    offset = 16 + hlen
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError("checkpoint truncated")
        params.arrays[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise CheckpointError("trailing bytes after last parameter")
    return params, header["train"]


def save(path: str | Path, params: ModelParams, train_config: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(params, train_config))


def load(path: str | Path, schema: FeatureSchema | None = None) -> tuple[ModelParams, dict]:
    return from_bytes(Path(path).read_bytes(), schema)
