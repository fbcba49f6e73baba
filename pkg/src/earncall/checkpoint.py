"""Binary checkpoint container.

Layout::

    b"EARNCKPT"                 magic
    uint32 LE                   format version
    uint64 LE                   header length
    header                      UTF-8 JSON (sorted keys)
    payload                     concatenated little-endian float64 tensors

The header holds the model config, a free-form run config snapshot, the
vocabulary and embedding-file hashes, and one {name, shape, offset, count}
entry per tensor. Nothing time-dependent is written, so identical models
give identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError, ValidationError
from .model import Model, ModelConfig

MAGIC = b"EARNCKPT"
VERSION = 1


def save_checkpoint(path, model: Model, *, vocab_hash: str, embedding_hash: str, run_config=None):
    tensors = [("param/" + k, v) for k, v in model.params.items()]
    tensors += [("buffer/" + k, v) for k, v in model.buffers.items()]
    entries, chunks, offset = [], [], 0
    for name, value in tensors:
        data = np.ascontiguousarray(value, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(np.shape(value)), "offset": offset, "count": int(np.size(value))})
        chunks.append(data)
        offset += len(data)
    header = {
        "model_config": model.config.to_dict(),
        "seed": model.seed,
        "vocab_hash": vocab_hash,
        "embedding_hash": embedding_hash,
        "run_config": run_config or {},
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read(fh)[0]


def _read(fh):
    if fh.read(len(MAGIC)) != MAGIC:
        raise ParseError("not a checkpoint file")
    raw = fh.read(12)
    if len(raw) != 12:
        raise ParseError("truncated checkpoint header")
    version, size = struct.unpack("<IQ", raw)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(fh.read(size).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError("corrupt checkpoint header") from None
    return header, fh.read()


def load_checkpoint(path, *, vocab_hash=None, embedding_hash=None):
    """Load a model, refusing files built against different inputs.

    Returns (model, header).
    """
    with open(path, "rb") as fh:
        header, payload = _read(fh)
    if vocab_hash is not None and header["vocab_hash"] != vocab_hash:
        raise ValidationError("checkpoint vocabulary hash does not match the current vocabulary")
    if embedding_hash is not None and header["embedding_hash"] != embedding_hash:
        raise ValidationError("checkpoint embedding hash does not match the embedding file")

    params, buffers = {}, {}
    for entry in header["tensors"]:
        start, count = entry["offset"], entry["count"]
        if start + 8 * count > len(payload):
            raise ParseError(f"tensor {entry['name']} runs past the end of the file")
        value = np.frombuffer(payload, dtype="<f8", count=count, offset=start).astype(np.float64)
        value = value.reshape(entry["shape"])
        kind, name = entry["name"].split("/", 1)
        (params if kind == "param" else buffers)[name] = value
    cfg = header["model_config"]
    cfg["hidden"] = tuple(cfg["hidden"])
    model = Model(ModelConfig(**cfg), params, buffers, header.get("seed"))
    expected = Model.init(model.config, 0)
    if set(expected.params) != set(params) or set(expected.buffers) != set(buffers):
        raise ParseError("checkpoint tensors do not match the model configuration")
    for name, value in {**expected.params, **expected.buffers}.items():
        got = params.get(name, buffers.get(name))
        if got.shape != value.shape:
            raise ParseError(f"tensor {name} has shape {got.shape}, expected {value.shape}")
    return model, header
