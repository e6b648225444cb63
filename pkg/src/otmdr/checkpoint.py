"""Binary checkpoints.

Layout: ``b"OTMDR1"``, a little-endian uint32 header length, a UTF-8 JSON
header (model spec, kind, segment table, vector count), then every vector's
flattened segments as little-endian float64. Kinds: ``single`` (one
vector), ``ensemble`` (one per member), ``bnn`` (mu then log sigma).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from otmdr.errors import CheckpointError
from otmdr.nn import ModelSpec, VariationalParams
from otmdr.perturb import EnsembleState
from otmdr.tensor import ParamVector

MAGIC = b"OTMDR1"


def _vectors(obj) -> tuple[str, list[ParamVector]]:
    if isinstance(obj, ParamVector):
        return "single", [obj]
    if isinstance(obj, EnsembleState):
        return "ensemble", list(obj.members)
    if isinstance(obj, VariationalParams):
        return "bnn", [obj.mu, obj.log_sigma]
    raise CheckpointError(f"cannot checkpoint {type(obj).__name__}")


def save_checkpoint(path, model: ModelSpec, obj):
    kind, vecs = _vectors(obj)
    header = {
        "kind": kind,
        "model": {"layer_sizes": list(model.layer_sizes), "activation": model.activation},
        "segments": [[name, list(shape)] for name, shape in vecs[0].shapes.items()],
        "vectors": len(vecs),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for v in vecs:
            f.write(v.flatten().astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelSpec, object]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an OTMDR1 checkpoint")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[pos : pos + 4])
    pos += 4
    try:
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    pos += hlen
    model = ModelSpec(tuple(header["model"]["layer_sizes"]), header["model"]["activation"])
    shapes = {name: tuple(shape) for name, shape in header["segments"]}
    template = ParamVector.zeros(shapes)
    n = template.total_len
    count = header["vectors"]
    if len(raw) - pos != 8 * n * count:
        raise CheckpointError(f"{path}: payload has {len(raw) - pos} bytes, expected {8 * n * count}")
    payload = np.frombuffer(raw, dtype="<f8", offset=pos).astype(np.float64)
    vecs = [template.unflatten(payload[i * n : (i + 1) * n]) for i in range(count)]
    kind = header["kind"]
    if kind == "single":
        return model, vecs[0]
    if kind == "ensemble":
        return model, EnsembleState(vecs)
    if kind == "bnn":
        return model, VariationalParams(vecs[0], vecs[1])
    raise CheckpointError(f"{path}: unknown kind {kind!r}")
