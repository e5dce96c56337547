"""Versioned model checkpoints: JSON metadata header + raw parameter blob."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .codec import codec_from_json, codec_to_json
from .model import ModelConfig, TabMTModel
from .schema import TableSchema

MAGIC = b"TABMTCK\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str, model: TabMTModel, schema: TableSchema | None,
                    step: int = 0, seed: int = 0):
    named = model.named_parameters()
    params_meta = []
    blobs = []
    offset = 0
    for name, p in named:
        arr = np.ascontiguousarray(p.data)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        params_meta.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "schema": schema.to_json() if schema is not None else None,
        "codecs": [codec_to_json(c) for c in model.codecs],
        "model_config": asdict(model.cfg),
        "params": params_meta,
        "step": step,
        "seed": seed,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str) -> tuple[TabMTModel, TableSchema | None, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {header['format_version']}")
        blob = fh.read()
    codecs = [codec_from_json(c) for c in header["codecs"]]
    cfg = ModelConfig(**header["model_config"])
    model = TabMTModel(codecs, cfg, seed=header["seed"])
    named = dict(model.named_parameters())
    if set(named) != {pm["name"] for pm in header["params"]}:
        raise CheckpointError("parameter names do not match model topology")
    for pm in header["params"]:
        dt = np.dtype(pm["dtype"]).newbyteorder("<")
        arr = np.frombuffer(blob, dtype=dt, count=int(np.prod(pm["shape"]) or 1),
                            offset=pm["offset"])
        arr = arr.astype(np.dtype(pm["dtype"])).reshape(pm["shape"])
        named[pm["name"]].data = arr.copy()
    schema = (TableSchema.from_json(header["schema"])
              if header["schema"] is not None else None)
    return model, schema, header
