"""Binary model checkpoints with bit-exact float64 round trips.

Layout (all integers little-endian)::

    b"TREXMDL1"                  magic
    u32 version
    u32 n_meta, n_meta bytes     JSON metadata (model kind, hyper-parameters)
    u32 n_tensors
    per tensor: u16 name length, name (utf-8), u8 ndim, ndim x u32 dims
    float64 payload              tensors concatenated in table order
    32 bytes                     SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, VersionMismatchError
from .models import MlpClassifier, VaeModel

MAGIC = b"TREXMDL1"
FORMAT_VERSION = 1
_DIGEST = 32


def _tensors_of(model) -> tuple[dict, dict[str, np.ndarray]]:
    if isinstance(model, MlpClassifier):
        meta = {"kind": "mlp", "activation": model.activation, "meta": model.meta}
        return meta, model.params()
    if isinstance(model, VaeModel):
        return {"kind": "vae", "side": model.side, "meta": model.meta}, model.params()
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def dumps(model) -> bytes:
    meta, tensors = _tensors_of(model)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    blob = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in tensors.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFileError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes):
    if len(data) < len(MAGIC) + 4 + _DIGEST:
        raise CorruptFileError("checkpoint is truncated")
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptFileError("not a model checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<I", data[len(MAGIC):len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFileError("checkpoint checksum mismatch")
    r = _Reader(body)
    r.take(len(MAGIC) + 4)
    (n_meta,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(n_meta))
    except ValueError:
        raise CorruptFileError("checkpoint metadata is not valid JSON") from None
    (n_tensors,) = r.unpack("<I")
    table = []
    for _ in range(n_tensors):
        (n_name,) = r.unpack("<H")
        name = r.take(n_name).decode()
        (ndim,) = r.unpack("<B")
        table.append((name, r.unpack(f"<{ndim}I")))
    tensors = {}
    for name, shape in table:
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(body):
        raise CorruptFileError("trailing bytes after checkpoint payload")
    kind = meta.get("kind")
    if kind == "mlp":
        n_layers = len(tensors) // 2
        return MlpClassifier([tensors[f"W{k}"] for k in range(n_layers)],
                             [tensors[f"b{k}"] for k in range(n_layers)],
                             meta["activation"], meta.get("meta", {}))
    if kind == "vae":
        return VaeModel(tensors, int(meta["side"]), meta.get("meta", {}))
    raise CorruptFileError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_model(path):
    return loads(Path(path).read_bytes())
